"""Student sessions and the research dataset.

Students are identified only by a salted digest of their email; the email
itself never reaches the store. Sessions are resumable timed attempts with
optimistic versioning (compare-and-set on a per-session counter), and a
submitted session freezes one immutable Submission per question, answered
or not. Submissions, paired with their question and scheme item, are the
exportable research record.

Dataset export format: newline-delimited JSON, one record per submission,
UTF-8, sorted keys, ordered by (created_at, submission_id). Fields:
format_version, submission_id, session_id, exam_id, subject, question_id,
student_key, created_at, question, scheme_item, answer, empty,
assessments. No email or any other direct identifier is present.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import re
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable, Iterator

from .corpus import CHOICE_KINDS, ExamStore, Question, question_to_doc, scheme_item_to_doc
from .errors import (
    ConflictError,
    InvalidAnswer,
    InvalidEmail,
    NotFound,
    SessionClosed,
    ValidationError,
)
from .store import DocumentStore

DATASET_FORMAT_VERSION = 1

SESSIONS = "sessions"
SUBMISSIONS = "submissions"
ASSESSMENTS = "assessments"
QUESTION_BANK = "question_bank"

_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+$")


def identify(email: str, salt: str) -> str:
    """Salted digest of the normalized (trimmed, lowercased) email.

    The same email always maps to the same key within one deployment; the
    plaintext address is never stored.
    """
    normalized = email.strip().lower()
    if not _EMAIL_RE.match(normalized):
        raise InvalidEmail("email must look like local@domain")
    return hmac.new(salt.encode("utf-8"), normalized.encode("utf-8"), hashlib.sha256).hexdigest()


def _digest_id(*parts: str) -> str:
    return hashlib.sha256("\x00".join(parts).encode("utf-8")).hexdigest()[:32]


def submission_key(session_id: str, question_id: str) -> str:
    """Deterministic submission id, so a crashed submit can resume and
    readers can address submissions without scanning."""
    return _digest_id("submission", session_id, question_id)


def question_context(store: DocumentStore, exams: ExamStore,
                     exam_id: str, question_id: str) -> tuple[str, dict, dict]:
    """Resolve (subject, question doc, scheme item doc), from the corpus
    when the exam is present, else from the imported question bank. This is
    what lets an exported dataset be evaluated on a machine that never
    ingested the exams."""
    if exams.exists(exam_id):
        exam = exams.get_exam(exam_id)
        question = exam.question(question_id)
        item = exams.get_scheme(exam_id).items[question_id]
        return exam.subject, question_to_doc(question), scheme_item_to_doc(item)
    banked = store.get(QUESTION_BANK, _digest_id("bank", exam_id, question_id))
    if banked is None:
        raise NotFound(f"no question context for {question_id} (exam {exam_id} missing)")
    return banked["subject"], banked["question"], banked["scheme_item"]


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _parse_ts(value: str) -> datetime:
    return datetime.fromisoformat(value)


@dataclass(frozen=True)
class SessionState:
    session_id: str
    student_key: str
    exam_id: str
    status: str
    started_at: str
    answers: dict[str, dict]
    version: int

    @classmethod
    def from_doc(cls, doc: dict) -> "SessionState":
        return cls(
            doc["session_id"], doc["student_key"], doc["exam_id"], doc["status"],
            doc["started_at"], doc["answers"], doc["version"],
        )


@dataclass(frozen=True)
class Submission:
    submission_id: str
    session_id: str
    student_key: str
    exam_id: str
    question_id: str
    answer: dict | None
    empty: bool
    created_at: str

    @classmethod
    def from_doc(cls, doc: dict) -> "Submission":
        return cls(
            doc["submission_id"], doc["session_id"], doc["student_key"], doc["exam_id"],
            doc["question_id"], doc["answer"], doc["empty"], doc["created_at"],
        )


def validate_answer_payload(payload: dict, question: Question) -> dict:
    """Check a raw answer payload against the question and return the
    normalized form stored in the session."""
    if not isinstance(payload, dict):
        raise InvalidAnswer("answer payload must be an object")
    if question.kind in CHOICE_KINDS:
        if set(payload) - {"selected"} or "selected" not in payload:
            raise InvalidAnswer("choice answers carry exactly a 'selected' list")
        selected = payload["selected"]
        if not isinstance(selected, list) or not all(isinstance(x, str) for x in selected):
            raise InvalidAnswer("'selected' must be a list of option labels")
        labels = set(selected)
        unknown = labels - set(question.option_labels)
        if unknown:
            raise InvalidAnswer(
                f"selected options {sorted(unknown)} not among the options of {question.question_id}"
            )
        if question.kind == "single_choice" and len(labels) > 1:
            raise InvalidAnswer("single_choice takes at most one selected option")
        return {"selected": sorted(labels)}
    if set(payload) - {"text"} or "text" not in payload:
        raise InvalidAnswer("open answers carry exactly a 'text' field")
    text = payload["text"]
    if not isinstance(text, str):
        raise InvalidAnswer("'text' must be a string")
    return {"text": text}


class SessionStore:
    """Resumable exam sessions plus immutable submissions on top of the
    shared document store."""

    def __init__(self, store: DocumentStore, exams: ExamStore, salt: str,
                 now: Callable[[], datetime] = _utcnow):
        self._store = store
        self._exams = exams
        self._salt = salt
        self._now = now

    # -- identity ----------------------------------------------------------

    def identify(self, email: str) -> str:
        return identify(email, self._salt)

    # -- session lifecycle --------------------------------------------------

    def find_open_session(self, student_key: str, exam_id: str) -> SessionState | None:
        for _, doc in self._store.items(SESSIONS):
            if (doc["student_key"] == student_key and doc["exam_id"] == exam_id
                    and doc["status"] == "in_progress"):
                return SessionState.from_doc(doc)
        return None

    def start_or_resume_session(self, student_key: str, exam_id: str) -> SessionState:
        """Return the open session for (student, exam) if one exists,
        otherwise start a fresh one. Submitted attempts are closed and never
        resumed."""
        if not self._exams.exists(exam_id):
            raise NotFound(f"exam {exam_id} not found")
        existing = self.find_open_session(student_key, exam_id)
        if existing is not None:
            return existing
        doc = {
            "session_id": uuid.uuid4().hex,
            "student_key": student_key,
            "exam_id": exam_id,
            "status": "in_progress",
            "started_at": self._now().isoformat(),
            "answers": {},
            "version": 1,
        }
        self._store.cas(SESSIONS, doc["session_id"], 0, doc)
        return SessionState.from_doc(doc)

    def get_session(self, session_id: str) -> SessionState:
        doc = self._store.get(SESSIONS, session_id)
        if doc is None:
            raise NotFound(f"session {session_id} not found")
        return SessionState.from_doc(doc)

    def record_answer(self, session_id: str, question_id: str, payload: dict,
                      expected_version: int) -> SessionState:
        """Upsert one answer under optimistic concurrency. The write only
        lands if expected_version is still current."""
        doc = self._store.get(SESSIONS, session_id)
        if doc is None:
            raise NotFound(f"session {session_id} not found")
        if doc["status"] != "in_progress":
            raise SessionClosed(f"session {session_id} is {doc['status']}")
        question = self._exams.get_question(doc["exam_id"], question_id)
        normalized = validate_answer_payload(payload, question)
        normalized["answered_at"] = self._now().isoformat()
        doc["answers"][question_id] = normalized
        doc["version"] = expected_version + 1
        self._store.cas(SESSIONS, session_id, expected_version, doc)
        return SessionState.from_doc(doc)

    def submit_session(self, session_id: str) -> list[Submission]:
        """Close the session and freeze one Submission per question.
        Unanswered questions become explicit empty submissions so graders
        see omissions."""
        doc = self._store.get(SESSIONS, session_id)
        if doc is None:
            raise NotFound(f"session {session_id} not found")
        if doc["status"] != "in_progress":
            raise SessionClosed(f"session {session_id} is {doc['status']}")
        exam = self._exams.get_exam(doc["exam_id"])
        created_at = self._now().isoformat()
        submissions = []
        for question in exam.questions():
            sub_id = submission_key(session_id, question.question_id)
            answer = doc["answers"].get(question.question_id)
            payload = None
            if answer is not None:
                payload = {k: v for k, v in answer.items()}
            sub_doc = {
                "submission_id": sub_id,
                "session_id": session_id,
                "student_key": doc["student_key"],
                "exam_id": doc["exam_id"],
                "question_id": question.question_id,
                "answer": payload,
                "empty": payload is None,
                "created_at": created_at,
            }
            try:
                self._store.create(SUBMISSIONS, sub_id, sub_doc)
            except ConflictError:
                # crash-recovery path: keep the already-frozen submission
                sub_doc = self._store.get(SUBMISSIONS, sub_id)
            submissions.append(Submission.from_doc(sub_doc))
        expected = doc["version"]
        doc["status"] = "submitted"
        doc["version"] = expected + 1
        self._store.cas(SESSIONS, session_id, expected, doc)
        return submissions

    def mark_evaluated(self, session_id: str) -> None:
        doc = self._store.get(SESSIONS, session_id)
        if doc is None:
            raise NotFound(f"session {session_id} not found")
        if doc["status"] == "evaluated":
            return
        if doc["status"] != "submitted":
            raise SessionClosed(f"session {session_id} is {doc['status']}, not submitted")
        expected = doc["version"]
        doc["status"] = "evaluated"
        doc["version"] = expected + 1
        self._store.cas(SESSIONS, session_id, expected, doc)

    def get_submission(self, submission_id: str) -> Submission:
        doc = self._store.get(SUBMISSIONS, submission_id)
        if doc is None:
            raise NotFound(f"submission {submission_id} not found")
        return Submission.from_doc(doc)

    def session_submissions(self, session_id: str) -> list[Submission]:
        subs = [Submission.from_doc(doc) for _, doc in self._store.items(SUBMISSIONS)
                if doc["session_id"] == session_id]
        subs.sort(key=lambda s: s.submission_id)
        return subs

    # -- dataset export / import --------------------------------------------

    def _question_context(self, exam_id: str, question_id: str) -> tuple[str, dict, dict]:
        return question_context(self._store, self._exams, exam_id, question_id)

    def export_dataset(self, exam_id: str | None = None, subject: str | None = None,
                       since: str | None = None, until: str | None = None) -> Iterator[dict]:
        """Stream anonymized dataset records in deterministic order."""
        since_dt = _parse_ts(since) if since else None
        until_dt = _parse_ts(until) if until else None
        docs = [doc for _, doc in self._store.items(SUBMISSIONS)]
        docs.sort(key=lambda d: (d["created_at"], d["submission_id"]))
        for doc in docs:
            if exam_id is not None and doc["exam_id"] != exam_id:
                continue
            created = _parse_ts(doc["created_at"])
            if since_dt is not None and created < since_dt:
                continue
            if until_dt is not None and created > until_dt:
                continue
            subj, question_doc, item_doc = self._question_context(doc["exam_id"], doc["question_id"])
            if subject is not None and subj != subject:
                continue
            assessment = self._store.get(ASSESSMENTS, doc["submission_id"])
            yield {
                "format_version": DATASET_FORMAT_VERSION,
                "submission_id": doc["submission_id"],
                "session_id": doc["session_id"],
                "exam_id": doc["exam_id"],
                "subject": subj,
                "question_id": doc["question_id"],
                "student_key": doc["student_key"],
                "created_at": doc["created_at"],
                "question": question_doc,
                "scheme_item": item_doc,
                "answer": doc["answer"],
                "empty": doc["empty"],
                "assessments": [assessment] if assessment is not None else [],
            }

    def export_ndjson(self, **filters) -> Iterator[str]:
        for record in self.export_dataset(**filters):
            yield json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"

    def import_dataset(self, lines: Iterable[str]) -> int:
        """Load an exported dataset back into the store: submissions, their
        logged assessments, and enough question context to re-export and to
        run offline evaluations."""
        count = 0
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"line {lineno}: not valid JSON: {e}") from None
            if record.get("format_version") != DATASET_FORMAT_VERSION:
                raise ValidationError(f"line {lineno}: unsupported format_version")
            sub_doc = {
                "submission_id": record["submission_id"],
                "session_id": record["session_id"],
                "student_key": record["student_key"],
                "exam_id": record["exam_id"],
                "question_id": record["question_id"],
                "answer": record["answer"],
                "empty": record["empty"],
                "created_at": record["created_at"],
            }
            self._store.put(SUBMISSIONS, record["submission_id"], sub_doc)
            bank_key = _digest_id("bank", record["exam_id"], record["question_id"])
            self._store.put(QUESTION_BANK, bank_key, {
                "question_id": record["question_id"],
                "exam_id": record["exam_id"],
                "subject": record["subject"],
                "question": record["question"],
                "scheme_item": record["scheme_item"],
            })
            for assessment in record.get("assessments", []):
                self._store.put(ASSESSMENTS, record["submission_id"], assessment)
            count += 1
        return count
