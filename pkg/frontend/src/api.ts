// Thin typed client over the practice API. The only configuration is the
// base URL; everything else (salt, providers, tokens) lives server-side.

import type {
  AnswerPayload,
  ExamSummary,
  ResultsReport,
  SessionSnapshot,
  SessionState,
  StudentExam,
} from './types';
import { assertStudentSafe } from './sanitize';

export interface ApiConfig {
  baseUrl: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly tag: string;

  constructor(status: number, tag: string, message: string) {
    super(message);
    this.name = 'ApiError';
    this.status = status;
    this.tag = tag;
  }
}

async function request<T>(
  config: ApiConfig,
  method: string,
  path: string,
  body?: unknown,
): Promise<T> {
  const response = await fetch(config.baseUrl + path, {
    method,
    headers: body === undefined ? {} : { 'content-type': 'application/json' },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const text = await response.text();
  let parsed: unknown = null;
  try {
    parsed = text ? JSON.parse(text) : null;
  } catch {
    // non-JSON error bodies fall through to the generic ApiError below
  }
  if (!response.ok) {
    const envelope = parsed as { error?: { tag?: string; message?: string } } | null;
    const tag = envelope?.error?.tag ?? 'invalid_request';
    const message = envelope?.error?.message ?? `request failed with ${response.status}`;
    throw new ApiError(response.status, tag, message);
  }
  return parsed as T;
}

export function identify(config: ApiConfig, email: string): Promise<{ student_key: string }> {
  return request(config, 'POST', '/api/identify', { email });
}

export async function listExams(config: ApiConfig): Promise<ExamSummary[]> {
  const body = await request<{ exams: ExamSummary[] }>(config, 'GET', '/api/exams');
  return body.exams;
}

export async function getExam(config: ApiConfig, examId: string): Promise<StudentExam> {
  const exam = await request<StudentExam>(config, 'GET', `/api/exams/${examId}`);
  assertStudentSafe(exam);
  return exam;
}

export function createSession(
  config: ApiConfig,
  studentKey: string,
  examId: string,
): Promise<{ session: SessionState; resumed: boolean }> {
  return request(config, 'POST', '/api/sessions', {
    student_key: studentKey,
    exam_id: examId,
  });
}

export async function getSession(config: ApiConfig, sessionId: string): Promise<SessionSnapshot> {
  const snapshot = await request<SessionSnapshot>(config, 'GET', `/api/sessions/${sessionId}`);
  assertStudentSafe(snapshot.exam);
  return snapshot;
}

export function putAnswer(
  config: ApiConfig,
  sessionId: string,
  questionId: string,
  payload: AnswerPayload,
  expectedVersion: number,
): Promise<{ session: SessionState }> {
  return request(config, 'PUT', `/api/sessions/${sessionId}/answers/${questionId}`, {
    payload,
    expected_version: expectedVersion,
  });
}

export function submitSession(
  config: ApiConfig,
  sessionId: string,
): Promise<{ status: string; submission_ids: string[] }> {
  return request(config, 'POST', `/api/sessions/${sessionId}/submit`);
}

export function getResults(config: ApiConfig, sessionId: string): Promise<ResultsReport> {
  return request(config, 'GET', `/api/sessions/${sessionId}/results`);
}
