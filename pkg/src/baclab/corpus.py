"""Exam corpus: load, validate, store and serve exams with their grading
schemes (bareme).

Exam file format (version 1, strict JSON, UTF-8):

    {
      "format_version": 1,
      "exam_id": "cs-2024-official",
      "subject": "Computer Science",
      "year": 2024,
      "variant_label": "2024 official",
      "time_limit_minutes": 180,
      "office_points": 10,
      "total_points": 100,
      "sections": [
        {"section_label": "SUBIECTUL I",
         "questions": [
           {"question_id": "q1", "kind": "single_choice",
            "prompt": "...", "max_points": 5,
            "options": [{"label": "a", "text": "..."}, ...]},
           {"question_id": "q4", "kind": "open_text",
            "prompt": "...", "max_points": 10}
         ]}
      ],
      "scheme": {
        "q1": {"correct_options": ["b"]},
        "q4": {"criteria": [{"text": "...", "points": 4}, ...]}
      }
    }

Unknown keys are rejected everywhere. Points are integers; for choice
questions the scheme item is worth the question's max_points (all or
nothing, official grid style). Diacritics in prompts and criteria are kept
verbatim; serialization never escapes non-ASCII.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from .errors import ConflictError, NotFound, ParseError, ValidationError
from .store import DocumentStore, _SAFE_KEY, canonical_json

FORMAT_VERSION = 1
CHOICE_KINDS = ("single_choice", "multiple_choice")
QUESTION_KINDS = CHOICE_KINDS + ("open_text",)

# Field names that must never appear in student-facing output.
SCHEME_FIELDS = ("scheme", "correct_options", "criteria")

DEFAULT_YEAR_RANGE = (2019, 2026)


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True)
class Question:
    question_id: str
    kind: str
    prompt: str
    max_points: int
    options: tuple[Option, ...] = ()

    @property
    def option_labels(self) -> tuple[str, ...]:
        return tuple(o.label for o in self.options)


@dataclass(frozen=True)
class Section:
    section_label: str
    questions: tuple[Question, ...]


@dataclass(frozen=True)
class Exam:
    exam_id: str
    subject: str
    year: int
    variant_label: str
    time_limit_minutes: int
    office_points: int
    total_points: int
    sections: tuple[Section, ...]

    def questions(self) -> list[Question]:
        return [q for s in self.sections for q in s.questions]

    def question(self, question_id: str) -> Question:
        for q in self.questions():
            if q.question_id == question_id:
                return q
        raise NotFound(f"question {question_id} not in exam {self.exam_id}")


@dataclass(frozen=True)
class SchemeItem:
    """Per-question rubric: correct options for grid items, weighted
    criteria for open answers."""

    question_id: str
    points: int
    correct_options: frozenset[str] = frozenset()
    criteria: tuple[tuple[str, int], ...] = ()

    @property
    def is_choice(self) -> bool:
        return bool(self.correct_options)

    def criterion_points(self) -> list[int]:
        if self.criteria:
            return [p for _, p in self.criteria]
        return [self.points]

    def criterion_texts(self) -> list[str]:
        if self.criteria:
            return [t for t, _ in self.criteria]
        return ["răspuns corect"]


@dataclass(frozen=True)
class GradingScheme:
    exam_id: str
    items: dict[str, SchemeItem]


@dataclass(frozen=True)
class ExamSummary:
    exam_id: str
    subject: str
    year: int
    variant_label: str
    time_limit_minutes: int


@dataclass(frozen=True)
class Violation:
    exam_id: str
    question_id: str | None
    message: str


# ---------------------------------------------------------------------------
# strict parsing helpers

def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


def _expect(value, kind, where: str):
    # bool is an int subclass; exam points must be real integers
    if kind is int and isinstance(value, bool):
        raise ValidationError(f"{where}: expected integer, got boolean")
    if not isinstance(value, kind):
        raise ValidationError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_question(obj: dict, where: str) -> Question:
    _require_keys(
        obj,
        {"question_id", "kind", "prompt", "options", "max_points"},
        {"question_id", "kind", "prompt", "max_points"},
        where,
    )
    qid = _expect(obj["question_id"], str, f"{where}.question_id")
    kind = _expect(obj["kind"], str, f"{where}.kind")
    if kind not in QUESTION_KINDS:
        raise ValidationError(f"question {qid}: unknown kind {kind!r}")
    prompt = _expect(obj["prompt"], str, f"question {qid}: prompt")
    if not prompt.strip():
        raise ValidationError(f"question {qid}: prompt is empty")
    max_points = _expect(obj["max_points"], int, f"question {qid}: max_points")
    if max_points <= 0:
        raise ValidationError(f"question {qid}: max_points must be positive")

    options: tuple[Option, ...] = ()
    if kind in CHOICE_KINDS:
        raw = obj.get("options")
        if not isinstance(raw, list) or len(raw) < 2:
            raise ValidationError(f"question {qid}: choice questions need at least 2 options")
        parsed = []
        for i, opt in enumerate(raw):
            _expect(opt, dict, f"question {qid}: options[{i}]")
            _require_keys(opt, {"label", "text"}, {"label", "text"}, f"question {qid}: options[{i}]")
            parsed.append(
                Option(
                    _expect(opt["label"], str, f"question {qid}: options[{i}].label"),
                    _expect(opt["text"], str, f"question {qid}: options[{i}].text"),
                )
            )
        labels = [o.label for o in parsed]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"question {qid}: duplicate option labels")
        options = tuple(parsed)
    else:
        if "options" in obj:
            raise ValidationError(f"question {qid}: open_text questions take no options")

    return Question(qid, kind, prompt, max_points, options)


def _parse_scheme_item(qid: str, obj, question: Question) -> SchemeItem:
    where = f"scheme[{qid}]"
    _expect(obj, dict, where)
    if "correct_options" in obj:
        _require_keys(obj, {"correct_options"}, {"correct_options"}, where)
        if question.kind not in CHOICE_KINDS:
            raise ValidationError(f"{where}: correct_options given for open_text question")
        raw = _expect(obj["correct_options"], list, f"{where}.correct_options")
        labels = [_expect(x, str, f"{where}.correct_options[]") for x in raw]
        if not labels:
            raise ValidationError(f"{where}: correct_options is empty")
        unknown = set(labels) - set(question.option_labels)
        if unknown:
            raise ValidationError(f"{where}: correct_options {sorted(unknown)} not among option labels")
        if question.kind == "single_choice" and len(set(labels)) != 1:
            raise ValidationError(f"{where}: single_choice must have exactly one correct option")
        return SchemeItem(qid, question.max_points, correct_options=frozenset(labels))
    if "criteria" in obj:
        _require_keys(obj, {"criteria"}, {"criteria"}, where)
        if question.kind != "open_text":
            raise ValidationError(f"{where}: criteria given for choice question")
        raw = _expect(obj["criteria"], list, f"{where}.criteria")
        if not raw:
            raise ValidationError(f"{where}: criteria is empty")
        criteria = []
        for i, c in enumerate(raw):
            _expect(c, dict, f"{where}.criteria[{i}]")
            _require_keys(c, {"text", "points"}, {"text", "points"}, f"{where}.criteria[{i}]")
            text = _expect(c["text"], str, f"{where}.criteria[{i}].text")
            points = _expect(c["points"], int, f"{where}.criteria[{i}].points")
            if points <= 0:
                raise ValidationError(f"question {qid}: criterion {i + 1} points must be positive")
            criteria.append((text, points))
        total = sum(p for _, p in criteria)
        if total != question.max_points:
            raise ValidationError(
                f"question {qid}: criterion points sum to {total}, max_points is {question.max_points}"
            )
        return SchemeItem(qid, question.max_points, criteria=tuple(criteria))
    raise ValidationError(f"{where}: need either correct_options or criteria")


def parse_exam_document(document: bytes | str, year_range=DEFAULT_YEAR_RANGE) -> dict:
    """Parse and fully validate an exam file; returns the canonical dict
    (exam plus scheme) ready for storage."""
    if isinstance(document, bytes):
        try:
            text = document.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"exam file is not valid UTF-8: {e}") from None
    else:
        text = document
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"exam file is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ParseError("exam file must contain a JSON object")

    top_keys = {
        "format_version", "exam_id", "subject", "year", "variant_label",
        "time_limit_minutes", "office_points", "total_points", "sections", "scheme",
    }
    _require_keys(obj, top_keys, top_keys, "exam file")
    if obj["format_version"] != FORMAT_VERSION:
        raise ValidationError(f"format_version: unsupported value {obj['format_version']!r}")

    exam_id = _expect(obj["exam_id"], str, "exam_id")
    if not _SAFE_KEY.match(exam_id):
        raise ValidationError(
            "exam_id: must match [A-Za-z0-9][A-Za-z0-9_.-]* and be at most 128 chars"
        )
    subject = _expect(obj["subject"], str, "subject")
    if not subject.strip():
        raise ValidationError("subject: must be non-empty")
    year = _expect(obj["year"], int, "year")
    if not (year_range[0] <= year <= year_range[1]):
        raise ValidationError(f"year: {year} outside admissible range {year_range[0]}-{year_range[1]}")
    variant_label = _expect(obj["variant_label"], str, "variant_label")
    time_limit = _expect(obj["time_limit_minutes"], int, "time_limit_minutes")
    if time_limit <= 0:
        raise ValidationError("time_limit_minutes: must be positive")
    office_points = _expect(obj["office_points"], int, "office_points")
    if office_points < 0:
        raise ValidationError("office_points: must be non-negative")
    total_points = _expect(obj["total_points"], int, "total_points")
    if total_points <= 0:
        raise ValidationError("total_points: must be positive")

    raw_sections = _expect(obj["sections"], list, "sections")
    if not raw_sections:
        raise ValidationError("sections: must be non-empty")
    sections = []
    seen_labels: set[str] = set()
    seen_qids: set[str] = set()
    for si, sec in enumerate(raw_sections):
        _expect(sec, dict, f"sections[{si}]")
        _require_keys(sec, {"section_label", "questions"}, {"section_label", "questions"}, f"sections[{si}]")
        label = _expect(sec["section_label"], str, f"sections[{si}].section_label")
        if label in seen_labels:
            raise ValidationError(f"sections[{si}]: duplicate section label {label!r}")
        seen_labels.add(label)
        raw_questions = _expect(sec["questions"], list, f"sections[{si}].questions")
        if not raw_questions:
            raise ValidationError(f"section {label!r}: questions must be non-empty")
        questions = []
        for qi, q in enumerate(raw_questions):
            _expect(q, dict, f"sections[{si}].questions[{qi}]")
            question = _parse_question(q, f"sections[{si}].questions[{qi}]")
            if question.question_id in seen_qids:
                raise ValidationError(f"question {question.question_id}: duplicate question_id")
            seen_qids.add(question.question_id)
            questions.append(question)
        sections.append(Section(label, tuple(questions)))

    exam = Exam(exam_id, subject, year, variant_label, time_limit, office_points,
                total_points, tuple(sections))

    raw_scheme = _expect(obj["scheme"], dict, "scheme")
    questions_by_id = {q.question_id: q for q in exam.questions()}
    extra = set(raw_scheme) - set(questions_by_id)
    if extra:
        raise ValidationError(f"scheme: items for unknown questions {sorted(extra)}")
    missing = set(questions_by_id) - set(raw_scheme)
    if missing:
        raise ValidationError(f"scheme: missing items for questions {sorted(missing)}")
    items = {qid: _parse_scheme_item(qid, raw_scheme[qid], questions_by_id[qid])
             for qid in questions_by_id}

    points_sum = sum(q.max_points for q in exam.questions())
    if exam.office_points + points_sum != exam.total_points:
        raise ValidationError(
            f"total_points: office_points ({exam.office_points}) plus question points "
            f"({points_sum}) is {exam.office_points + points_sum}, expected {exam.total_points}"
        )

    # Re-emit in the canonical field order so storage is byte-deterministic.
    return exam_to_doc(exam, GradingScheme(exam_id, items))


def exam_to_doc(exam: Exam, scheme: GradingScheme) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "exam_id": exam.exam_id,
        "subject": exam.subject,
        "year": exam.year,
        "variant_label": exam.variant_label,
        "time_limit_minutes": exam.time_limit_minutes,
        "office_points": exam.office_points,
        "total_points": exam.total_points,
        "sections": [
            {
                "section_label": s.section_label,
                "questions": [question_to_doc(q) for q in s.questions],
            }
            for s in exam.sections
        ],
        "scheme": {qid: scheme_item_to_doc(item) for qid, item in sorted(scheme.items.items())},
    }
    return doc


def question_to_doc(q: Question) -> dict:
    doc = {
        "question_id": q.question_id,
        "kind": q.kind,
        "prompt": q.prompt,
        "max_points": q.max_points,
    }
    if q.kind in CHOICE_KINDS:
        doc["options"] = [{"label": o.label, "text": o.text} for o in q.options]
    return doc


def scheme_item_to_doc(item: SchemeItem) -> dict:
    if item.is_choice:
        return {"correct_options": sorted(item.correct_options)}
    return {"criteria": [{"text": t, "points": p} for t, p in item.criteria]}


def question_from_doc(doc: dict) -> Question:
    return Question(
        doc["question_id"], doc["kind"], doc["prompt"], doc["max_points"],
        tuple(Option(o["label"], o["text"]) for o in doc.get("options", ())),
    )


def scheme_item_from_doc(question: Question, doc: dict) -> SchemeItem:
    if "correct_options" in doc:
        return SchemeItem(question.question_id, question.max_points,
                          correct_options=frozenset(doc["correct_options"]))
    return SchemeItem(question.question_id, question.max_points,
                      criteria=tuple((c["text"], c["points"]) for c in doc["criteria"]))


def exam_from_doc(doc: dict) -> Exam:
    sections = tuple(
        Section(s["section_label"], tuple(question_from_doc(q) for q in s["questions"]))
        for s in doc["sections"]
    )
    return Exam(
        doc["exam_id"], doc["subject"], doc["year"], doc["variant_label"],
        doc["time_limit_minutes"], doc["office_points"], doc["total_points"], sections,
    )


def scheme_from_doc(doc: dict) -> GradingScheme:
    exam = exam_from_doc(doc)
    questions = {q.question_id: q for q in exam.questions()}
    items = {qid: scheme_item_from_doc(questions[qid], raw)
             for qid, raw in doc["scheme"].items()}
    return GradingScheme(exam.exam_id, items)


def student_projection(doc: dict) -> dict:
    """Exam document as students may see it: everything except the scheme."""
    return {k: v for k, v in doc.items() if k != "scheme"}


# ---------------------------------------------------------------------------

class ExamStore:
    """Persisted exam corpus with validation on the way in.

    Ingestion is serialized per exam_id; reads take no locks.
    """

    COLLECTION = "exams"

    def __init__(self, store: DocumentStore, year_range=DEFAULT_YEAR_RANGE):
        self._store = store
        self._year_range = year_range
        self._ingest_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _exam_lock(self, exam_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._ingest_locks.setdefault(exam_id, threading.Lock())

    def ingest_exam(self, document: bytes | str) -> str:
        """Validate and persist one exam file. Idempotent for identical
        content; a different document under the same exam_id is rejected."""
        doc = parse_exam_document(document, self._year_range)
        exam_id = doc["exam_id"]
        with self._exam_lock(exam_id):
            existing = self._store.get(self.COLLECTION, exam_id)
            if existing is not None:
                if canonical_json(existing) == canonical_json(doc):
                    return exam_id
                raise ConflictError(f"exam {exam_id} already ingested with different content")
            self._store.create(self.COLLECTION, exam_id, doc)
        return exam_id

    def _doc(self, exam_id: str) -> dict:
        doc = self._store.get(self.COLLECTION, exam_id)
        if doc is None:
            raise NotFound(f"exam {exam_id} not found")
        return doc

    def exists(self, exam_id: str) -> bool:
        return self._store.get(self.COLLECTION, exam_id) is not None

    def list_exams(self, subject: str | None = None) -> list[ExamSummary]:
        summaries = []
        for _, doc in self._store.items(self.COLLECTION):
            if subject is not None and doc["subject"] != subject:
                continue
            summaries.append(ExamSummary(
                doc["exam_id"], doc["subject"], doc["year"],
                doc["variant_label"], doc["time_limit_minutes"],
            ))
        summaries.sort(key=lambda s: (s.subject, -s.year, s.variant_label))
        return summaries

    def get_exam(self, exam_id: str) -> Exam:
        return exam_from_doc(self._doc(exam_id))

    def get_student_view(self, exam_id: str) -> dict:
        return student_projection(self._doc(exam_id))

    def get_scheme(self, exam_id: str) -> GradingScheme:
        return scheme_from_doc(self._doc(exam_id))

    def get_question(self, exam_id: str, question_id: str) -> Question:
        return self.get_exam(exam_id).question(question_id)

    def validate_corpus(self) -> list[Violation]:
        """Re-check every stored exam against all invariants; empty list
        means the corpus is clean. Deterministic order by exam_id."""
        violations = []
        for key, doc in self._store.items(self.COLLECTION):
            try:
                reparsed = parse_exam_document(canonical_json(doc), self._year_range)
            except (ParseError, ValidationError) as e:
                violations.append(Violation(key, _question_of(str(e)), str(e)))
                continue
            if reparsed["exam_id"] != key:
                violations.append(Violation(key, None, f"stored under {key} but exam_id is {reparsed['exam_id']}"))
        return violations


def _question_of(message: str) -> str | None:
    # Validation messages name the question as "question <id>:" or "scheme[<id>]".
    import re as _re

    m = _re.search(r"question (\S+?):", message)
    if m:
        return m.group(1)
    m = _re.search(r"scheme\[(\S+?)\]", message)
    if m:
        return m.group(1)
    return None
