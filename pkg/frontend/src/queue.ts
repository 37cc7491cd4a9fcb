// Answer autosave queue.
//
// Saves happen on change, but the session version is a single counter, so
// writes are serialized: one in flight at a time, with the latest payload
// per question queued behind it (an older edit of the same question is
// simply replaced). A stale-write conflict is recovered by re-reading the
// session, adopting its version, and replaying the local payload on top,
// so the student's newest input always wins and is never dropped.

import { ApiError } from './api';
import type { AnswerPayload, SessionState } from './types';

export type SaveStatus = 'saving' | 'saved' | 'recovered' | 'error';

export interface QueueHooks {
  /**
   * Fresh authoritative session after any successful write or refresh.
   * `busy` holds question ids with local edits still in flight or queued;
   * their on-screen inputs must not be overwritten from the server copy.
   */
  onSession(session: SessionState, busy: ReadonlySet<string>): void;
  onStatus(questionId: string, status: SaveStatus, detail?: string): void;
}

export class AnswerQueue {
  private pending = new Map<string, AnswerPayload>();
  private current: string | null = null;
  private version: number;
  private driving = false;
  private settled: Array<() => void> = [];

  constructor(
    private readonly put: (
      questionId: string,
      payload: AnswerPayload,
      expectedVersion: number,
    ) => Promise<{ session: SessionState }>,
    private readonly refresh: () => Promise<SessionState>,
    initialVersion: number,
    private readonly hooks: QueueHooks,
  ) {
    this.version = initialVersion;
  }

  save(questionId: string, payload: AnswerPayload): void {
    this.pending.set(questionId, payload);
    this.hooks.onStatus(questionId, 'saving');
    void this.drive();
  }

  /** Resolves once every queued write has landed (or errored out). */
  flush(): Promise<void> {
    if (!this.driving && this.pending.size === 0) return Promise.resolve();
    return new Promise((resolve) => this.settled.push(resolve));
  }

  private async drive(): Promise<void> {
    if (this.driving) return;
    this.driving = true;
    try {
      while (this.pending.size > 0) {
        const [questionId, payload] = this.pending.entries().next().value as [
          string,
          AnswerPayload,
        ];
        this.pending.delete(questionId);
        this.current = questionId;
        try {
          await this.writeOne(questionId, payload);
        } finally {
          this.current = null;
        }
      }
    } finally {
      this.driving = false;
      const waiters = this.settled;
      this.settled = [];
      waiters.forEach((resolve) => resolve());
    }
  }

  private busyIds(): ReadonlySet<string> {
    const busy = new Set(this.pending.keys());
    if (this.current) busy.add(this.current);
    return busy;
  }

  private async writeOne(questionId: string, payload: AnswerPayload): Promise<void> {
    let recovered = false;
    for (let attempt = 0; attempt < 3; attempt++) {
      try {
        const { session } = await this.put(questionId, payload, this.version);
        this.version = session.version;
        this.hooks.onSession(session, this.busyIds());
        this.hooks.onStatus(questionId, recovered ? 'recovered' : 'saved');
        return;
      } catch (error) {
        if (error instanceof ApiError && error.tag === 'version_conflict' && attempt < 2) {
          const fresh = await this.refresh();
          this.version = fresh.version;
          this.hooks.onSession(fresh, this.busyIds());
          recovered = true;
          continue;
        }
        const detail = error instanceof Error ? error.message : String(error);
        this.hooks.onStatus(questionId, 'error', detail);
        return;
      }
    }
  }
}
