// Shapes served by the exam practice API. Only student-safe fields appear
// here: grading schemes never leave the server, and sanitize.ts double-checks
// that at runtime.

export type QuestionKind = 'single_choice' | 'multiple_choice' | 'open_text';

export interface QuestionOption {
  label: string;
  text: string;
}

export interface StudentQuestion {
  question_id: string;
  kind: QuestionKind;
  prompt: string;
  max_points: number;
  options: QuestionOption[];
}

export interface ExamSection {
  section_label: string;
  questions: StudentQuestion[];
}

export interface ExamSummary {
  exam_id: string;
  subject: string;
  year: number;
  variant_label: string;
  time_limit_minutes: number;
}

export interface StudentExam extends ExamSummary {
  office_points: number;
  total_points: number;
  sections: ExamSection[];
}

export type AnswerPayload = { selected: string[] } | { text: string };

/** What the server stores: the payload plus a write timestamp. */
export type StoredAnswer = AnswerPayload & { answered_at?: string };

export interface SessionState {
  session_id: string;
  student_key: string;
  exam_id: string;
  status: 'in_progress' | 'submitted' | 'evaluated';
  started_at: string;
  answers: Record<string, StoredAnswer>;
  version: number;
}

export interface SessionSnapshot {
  session: SessionState;
  exam: StudentExam;
  remaining_seconds: number;
}

export type BreakdownRow = [criterion: string, awarded: number, possible: number];

export interface ResultItem {
  question_id: string;
  max_points: number;
  status: 'ok' | 'pending';
  score: number;
  source: string;
  experimental: boolean;
  explanation: string;
  breakdown: BreakdownRow[];
  warnings: string[];
  disclaimer: string | null;
}

export interface ResultsReport {
  session_id: string;
  exam_id: string;
  status: string;
  office_points: number;
  total_score: number;
  max_total: number;
  pending: string[];
  items: ResultItem[];
  disclaimer: string;
}
