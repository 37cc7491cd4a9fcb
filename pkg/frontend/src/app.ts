// Screen flow: login -> exam list -> timed session -> results.
// Plain DOM rendering; every server string lands via textContent so hostile
// content stays inert. The only config is the API base URL.

import {
  type ApiConfig,
  ApiError,
  createSession,
  getExam,
  getResults,
  getSession,
  identify,
  listExams,
  submitSession,
  putAnswer,
} from './api';
import { type Countdown, startCountdown } from './countdown';
import { clearProfile, loadProfile, saveProfile } from './persistence';
import { AnswerQueue } from './queue';
import { el } from './sanitize';
import type {
  AnswerPayload,
  ResultsReport,
  SessionSnapshot,
  SessionState,
  StudentQuestion,
} from './types';

const CONSENT =
  'Platformă de exersare. Răspunsurile deschise sunt corectate experimental ' +
  'de un model de limbaj, nu de profesori; scorurile nu sunt note oficiale. ' +
  'Emailul nu este stocat niciodată: folosim doar o amprentă anonimă.';

export interface AppOptions {
  config: ApiConfig;
  root: HTMLElement;
}

export class App {
  private readonly config: ApiConfig;
  private readonly root: HTMLElement;
  private queue: AnswerQueue | null = null;
  private countdown: Countdown | null = null;
  private session: SessionState | null = null;

  constructor(options: AppOptions) {
    this.config = options.config;
    this.root = options.root;
  }

  /** Entry point: resume a known session if one is stored, else log in. */
  async boot(): Promise<void> {
    const profile = loadProfile();
    if (profile?.sessionId) {
      try {
        const snapshot = await getSession(this.config, profile.sessionId);
        if (snapshot.session.status === 'in_progress') {
          this.renderSession(snapshot);
        } else {
          await this.showResults(profile.sessionId);
        }
        return;
      } catch (error) {
        if (!(error instanceof ApiError)) throw error;
        saveProfile({ studentKey: profile.studentKey });
      }
    }
    if (profile) {
      await this.showExamList(profile.studentKey);
    } else {
      this.renderLogin();
    }
  }

  /** Tear down timers and DOM, as when the tab closes. */
  destroy(): void {
    this.countdown?.stop();
    this.countdown = null;
    this.queue = null;
    this.root.replaceChildren();
  }

  private screen(name: string): HTMLElement {
    this.countdown?.stop();
    this.countdown = null;
    this.root.replaceChildren();
    const pane = el('div', `screen screen-${name}`);
    this.root.appendChild(pane);
    return pane;
  }

  private showError(pane: HTMLElement, error: unknown): void {
    const message =
      error instanceof ApiError ? error.message : 'ceva nu a mers; încearcă din nou';
    let banner = pane.querySelector<HTMLElement>('.app-error');
    if (!banner) {
      banner = el('div', 'app-error');
      pane.prepend(banner);
    }
    banner.textContent = message;
  }

  // ---- login ----

  private renderLogin(): void {
    const pane = this.screen('login');
    pane.appendChild(el('h1', undefined, 'Exersare pentru Bacalaureat'));
    pane.appendChild(el('p', 'consent', CONSENT));

    const form = el('form');
    const email = el('input');
    email.id = 'email';
    email.type = 'email';
    email.placeholder = 'emailul tău';
    email.required = true;
    const button = el('button', undefined, 'Intră');
    button.id = 'login-btn';
    button.type = 'submit';
    form.append(email, button);
    pane.appendChild(form);

    form.addEventListener('submit', (event) => {
      event.preventDefault();
      void identify(this.config, email.value)
        .then(({ student_key }) => {
          saveProfile({ studentKey: student_key });
          return this.showExamList(student_key);
        })
        .catch((error) => this.showError(pane, error));
    });
  }

  // ---- exam list ----

  private async showExamList(studentKey: string): Promise<void> {
    const pane = this.screen('exams');
    pane.appendChild(el('h1', undefined, 'Alege un examen'));
    try {
      const exams = await listExams(this.config);
      const list = el('ul', 'exam-list');
      for (const exam of exams) {
        const item = el('li');
        const pick = el(
          'button',
          'exam-pick',
          `${exam.subject} ${exam.year} (${exam.variant_label}, ${exam.time_limit_minutes} min)`,
        );
        pick.dataset.examId = exam.exam_id;
        pick.dataset.subject = exam.subject;
        pick.addEventListener('click', () => void this.startSession(studentKey, exam.exam_id));
        item.appendChild(pick);
        list.appendChild(item);
      }
      pane.appendChild(list);
    } catch (error) {
      this.showError(pane, error);
    }

    const forget = el('button', 'forget-me', 'Uită-mă');
    forget.addEventListener('click', () => {
      clearProfile();
      this.renderLogin();
    });
    pane.appendChild(forget);
  }

  private async startSession(studentKey: string, examId: string): Promise<void> {
    try {
      await getExam(this.config, examId); // screens the projection before use
      const { session } = await createSession(this.config, studentKey, examId);
      saveProfile({ studentKey, sessionId: session.session_id });
      const snapshot = await getSession(this.config, session.session_id);
      if (snapshot.session.status === 'in_progress') {
        this.renderSession(snapshot);
      } else {
        await this.showResults(session.session_id);
      }
    } catch (error) {
      this.showError(this.root.firstElementChild as HTMLElement, error);
    }
  }

  // ---- session ----

  private renderSession(snapshot: SessionSnapshot): void {
    const pane = this.screen('session');
    const { exam } = snapshot;
    this.session = snapshot.session;

    const header = el('header');
    header.appendChild(
      el('h1', undefined, `${exam.subject} ${exam.year}, ${exam.variant_label}`),
    );
    const clock = el('span', 'countdown');
    clock.id = 'countdown';
    header.appendChild(clock);
    pane.appendChild(header);
    pane.appendChild(
      el('p', 'office-note', `Din oficiu: ${exam.office_points} puncte din ${exam.total_points}.`),
    );

    const sessionId = snapshot.session.session_id;
    this.queue = new AnswerQueue(
      (questionId, payload, version) =>
        putAnswer(this.config, sessionId, questionId, payload, version),
      async () => (await getSession(this.config, sessionId)).session,
      snapshot.session.version,
      {
        onSession: (session, busy) => this.applySession(session, busy),
        onStatus: (questionId, status, detail) => {
          const slot = pane.querySelector<HTMLElement>(
            `.q-status[data-question="${questionId}"]`,
          );
          if (!slot) return;
          slot.dataset.state = status;
          slot.textContent =
            status === 'saving' ? 'se salvează...'
            : status === 'saved' ? 'salvat'
            : status === 'recovered' ? 'salvat (alt tab a scris între timp)'
            : `eroare la salvare: ${detail ?? ''}`;
        },
      },
    );

    for (const section of exam.sections) {
      const block = el('section');
      block.appendChild(el('h2', undefined, section.section_label));
      for (const question of section.questions) {
        block.appendChild(this.renderQuestion(question));
      }
      pane.appendChild(block);
    }
    this.applySession(snapshot.session, new Set());

    const submit = el('button', undefined, 'Trimite examenul');
    submit.id = 'submit-btn';
    submit.addEventListener('click', () => void this.submit(pane, sessionId, submit));
    pane.appendChild(submit);

    this.countdown = startCountdown(clock, snapshot.remaining_seconds, () => {
      void this.submit(pane, sessionId, submit);
    });
  }

  private renderQuestion(question: StudentQuestion): HTMLElement {
    const card = el('article', 'question');
    card.dataset.question = question.question_id;
    const head = el('h3', undefined, `${question.question_id}. `);
    head.appendChild(el('span', 'prompt', question.prompt));
    head.appendChild(el('span', 'points', ` (${question.max_points} p)`));
    card.appendChild(head);

    const save = (payload: AnswerPayload) => this.queue?.save(question.question_id, payload);

    if (question.kind === 'open_text') {
      const box = el('textarea');
      box.name = question.question_id;
      box.addEventListener('input', () => save({ text: box.value }));
      card.appendChild(box);
    } else {
      const multi = question.kind === 'multiple_choice';
      for (const option of question.options) {
        const row = el('label', 'option');
        const input = el('input');
        input.type = multi ? 'checkbox' : 'radio';
        input.name = question.question_id;
        input.value = option.label;
        input.addEventListener('change', () => {
          const checked = Array.from(
            card.querySelectorAll<HTMLInputElement>('input:checked'),
          ).map((node) => node.value);
          save({ selected: checked });
        });
        row.append(input, el('span', undefined, `${option.label}) ${option.text}`));
        card.appendChild(row);
      }
    }

    const status = el('span', 'q-status');
    status.dataset.question = question.question_id;
    card.appendChild(status);
    return card;
  }

  /** Reflect authoritative answers into inputs, except ones still being edited. */
  private applySession(session: SessionState, busy: ReadonlySet<string>): void {
    this.session = session;
    for (const card of this.root.querySelectorAll<HTMLElement>('.question')) {
      const questionId = card.dataset.question ?? '';
      if (busy.has(questionId)) continue;
      const payload = session.answers[questionId];
      const box = card.querySelector('textarea');
      if (box) {
        const text = payload && 'text' in payload ? payload.text : '';
        if (box.value !== text) box.value = text;
        continue;
      }
      const selected = new Set(payload && 'selected' in payload ? payload.selected : []);
      for (const input of card.querySelectorAll<HTMLInputElement>('input')) {
        input.checked = selected.has(input.value);
      }
    }
  }

  private async submit(
    pane: HTMLElement,
    sessionId: string,
    button: HTMLButtonElement,
  ): Promise<void> {
    button.disabled = true;
    try {
      await this.queue?.flush();
      await submitSession(this.config, sessionId);
      await this.showResults(sessionId);
    } catch (error) {
      if (error instanceof ApiError && error.tag === 'session_closed') {
        await this.showResults(sessionId);
        return;
      }
      button.disabled = false;
      this.showError(pane, error);
    }
  }

  // ---- results ----

  private async showResults(sessionId: string): Promise<void> {
    const pane = this.screen('results');
    pane.appendChild(el('h1', undefined, 'Rezultate'));
    try {
      const report = await this.fetchSettledResults(sessionId);
      this.renderReport(pane, report);
    } catch (error) {
      this.showError(pane, error);
    }
  }

  /** Grading runs right after submit; poll briefly until items settle. */
  private async fetchSettledResults(sessionId: string): Promise<ResultsReport> {
    let report = await getResults(this.config, sessionId);
    for (let i = 0; i < 20 && report.status !== 'evaluated' && report.pending.length > 0; i++) {
      await new Promise((resolve) => setTimeout(resolve, 250));
      report = await getResults(this.config, sessionId);
    }
    return report;
  }

  private renderReport(pane: HTMLElement, report: ResultsReport): void {
    const total = el(
      'p',
      'total',
      `Punctaj: ${report.total_score} / ${report.max_total} (include ${report.office_points} puncte din oficiu)`,
    );
    total.id = 'total-score';
    pane.appendChild(total);
    pane.appendChild(el('p', 'report-disclaimer', report.disclaimer));

    for (const item of report.items) {
      const card = el('article', 'result-item');
      card.dataset.question = item.question_id;
      const title = el('h3', undefined, `${item.question_id}: ${item.score} / ${item.max_points}`);
      if (item.experimental) title.appendChild(el('span', 'experimental-badge', ' experimental'));
      card.appendChild(title);

      const rows = el('ul', 'breakdown');
      for (const [criterion, awarded, possible] of item.breakdown) {
        rows.appendChild(el('li', undefined, `${criterion}: ${awarded} / ${possible}`));
      }
      card.appendChild(rows);
      card.appendChild(el('p', 'explanation', item.explanation));
      if (item.disclaimer) card.appendChild(el('p', 'item-disclaimer', item.disclaimer));
      pane.appendChild(card);
    }

    const back = el('button', undefined, 'Alt examen');
    back.id = 'back-btn';
    back.addEventListener('click', () => {
      const profile = loadProfile();
      if (profile) saveProfile({ studentKey: profile.studentKey });
      void this.boot();
    });
    pane.appendChild(back);
  }
}
