"""Rubric-guided assessment of submissions.

Choice questions are scored deterministically, all or nothing against the
scheme's correct option set, official grid style. Open answers go to a
model provider with a prompt that carries the question, the verbatim
student solution, and every scheme criterion with its point value, plus an
instruction to evaluate strictly against the scheme and to end with a
machine-parseable score block:

    ===SCORE===
    1: <points for criterion 1>
    ...
    TOTAL: <sum>
    ===END===

The parser accepts surrounding prose and per-line whitespace, nothing
else. Per-criterion awards are clamped into [0, criterion points], so no
model output can ever produce an out-of-range score.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable

from .corpus import CHOICE_KINDS, ExamStore, Question, SchemeItem
from .errors import InvalidAnswer, KindMismatch, NotFound, NotSubmitted, UnparseableOutput
from .gateway import Gateway
from .sessions import ASSESSMENTS, SESSIONS, SUBMISSIONS, SessionStore, Submission, submission_key
from .store import DocumentStore

DETERMINISTIC = "deterministic"

DISCLAIMER = (
    "Feedback experimental generat automat de un model de limbaj; "
    "poate fi inexact și nu reprezintă o notă oficială."
)

STRICT_INSTRUCTION = (
    "Evaluează rezolvarea STRICT conform baremului de mai jos. Acordă puncte "
    "numai pentru cerințele care apar explicit în barem, fără puncte din oficiu "
    "și fără a depăși punctajul vreunui criteriu."
)

_BLOCK_START = "===SCORE==="
_BLOCK_END = "===END==="
_AWARD_RE = re.compile(r"^(\d+): (-?\d+)$")
_TOTAL_RE = re.compile(r"^TOTAL: (-?\d+)$")


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class AssessmentResult:
    """One scored submission: where the score came from, the per-criterion
    breakdown (text, awarded, possible), and the shown explanation."""

    submission_id: str
    source: str
    score: int
    breakdown: list[tuple[str, int, int]]
    explanation: str
    experimental: bool
    raw_output: str = ""
    latency_seconds: float = 0.0
    created_at: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "submission_id": self.submission_id,
            "status": "ok",
            "source": self.source,
            "score": self.score,
            "breakdown": [list(row) for row in self.breakdown],
            "explanation": self.explanation,
            "experimental": self.experimental,
            "raw_output": self.raw_output,
            "latency_seconds": self.latency_seconds,
            "created_at": self.created_at,
            "warnings": list(self.warnings),
            "error": None,
        }


@dataclass(frozen=True)
class PromptDocument:
    """Prompt for one open-text assessment, kept as separate blocks so the
    student text can never masquerade as rubric text."""

    system_instruction: str
    question_block: str
    scheme_block: str
    solution_block: str
    output_format_instruction: str

    def guard(self) -> str:
        """Block fence that provably collides with none of the contents."""
        contents = (self.question_block, self.scheme_block, self.solution_block)
        n = 0
        while True:
            guard = f"==BLOC{n or ''}=="
            if not any(guard in c for c in contents):
                return guard
            n += 1

    def rendered(self) -> str:
        guard = self.guard()
        return (
            f"{self.system_instruction}\n"
            f"\n"
            f"DELIMITATOR: {guard}\n"
            f"\n"
            f"{guard} INTREBARE\n{self.question_block}\n{guard} SFARSIT\n"
            f"\n"
            f"{guard} BAREM\n{self.scheme_block}\n{guard} SFARSIT\n"
            f"\n"
            f"{guard} REZOLVARE\n{self.solution_block}\n{guard} SFARSIT\n"
            f"\n"
            f"{self.output_format_instruction}"
        )


def extract_blocks(rendered: str) -> dict[str, str]:
    """Inverse of PromptDocument.rendered() for the three content blocks;
    used to prove delimiter handling survives adversarial solutions."""
    lines = rendered.split("\n")
    guard = None
    for line in lines:
        if line.startswith("DELIMITATOR: "):
            guard = line[len("DELIMITATOR: "):]
            break
    if guard is None:
        raise ValueError("rendered prompt has no DELIMITATOR line")
    blocks = {}
    name = None
    buf: list[str] = []
    for line in lines:
        if name is None:
            if line.startswith(f"{guard} ") and line != f"{guard} SFARSIT":
                name = line[len(guard) + 1:]
                buf = []
        elif line == f"{guard} SFARSIT":
            blocks[name] = "\n".join(buf)
            name = None
        else:
            buf.append(line)
    return {"question": blocks["INTREBARE"], "scheme": blocks["BAREM"],
            "solution": blocks["REZOLVARE"]}


def build_prompt(question: Question, solution: dict, item: SchemeItem,
                 language: str = "ro") -> PromptDocument:
    """Deterministic prompt for one open-text submission. The solution text
    goes in verbatim; delimiters are chosen so they cannot collide with it."""
    if question.kind != "open_text":
        raise KindMismatch(f"question {question.question_id} is {question.kind}, not open_text")
    if item.question_id != question.question_id or item.is_choice:
        raise KindMismatch(f"scheme item does not match open question {question.question_id}")
    text = (solution or {}).get("text", "")
    if not isinstance(text, str) or not text.strip():
        raise InvalidAnswer("cannot build a prompt for an empty solution")

    scheme_lines = [
        f"{i}. {criterion} ({points} {'punct' if points == 1 else 'puncte'})"
        for i, (criterion, points) in enumerate(item.criteria, start=1)
    ]
    points_list = item.criterion_points()
    template = [_BLOCK_START]
    template += [f"{i}: <0-{p}>" for i, p in enumerate(points_list, start=1)]
    template.append(f"TOTAL: <0-{sum(points_list)}>")
    template.append(_BLOCK_END)

    return PromptDocument(
        system_instruction=(
            "Ești un corector oficial de examen de Bacalaureat. "
            + STRICT_INSTRUCTION
        ),
        question_block=question.prompt,
        scheme_block="\n".join(scheme_lines),
        solution_block=text,
        output_format_instruction=(
            "Explică pe scurt evaluarea fiecărui criteriu, apoi încheie "
            "răspunsul cu blocul de punctaj, exact în formatul:\n" + "\n".join(template)
        ),
    )


def format_score_block(awards: list[int], total: int | None = None) -> str:
    """Emit a score block in the exact grammar the parser accepts."""
    lines = [_BLOCK_START]
    lines += [f"{i}: {a}" for i, a in enumerate(awards, start=1)]
    lines.append(f"TOTAL: {sum(awards) if total is None else total}")
    lines.append(_BLOCK_END)
    return "\n".join(lines)


@dataclass(frozen=True)
class ParsedAssessment:
    score: int
    breakdown: list[tuple[str, int, int]]
    explanation: str
    warnings: list[str]


def parse_assessment(raw_output: str, item: SchemeItem) -> ParsedAssessment:
    """Extract the structured score block from model output.

    The block grammar is rigid (one award line per criterion, in order,
    then TOTAL, then the end marker); prose before and after the block is
    kept as the explanation. Awards are clamped into range instead of
    rejected, with a warning per clamp. Raises UnparseableOutput when no
    valid block exists; the last valid block wins when several do.
    """
    points = item.criterion_points()
    k = len(points)
    lines = raw_output.split("\n")
    stripped = [line.strip() for line in lines]
    candidates = []
    for i, line in enumerate(stripped):
        if line != _BLOCK_START:
            continue
        end = i + k + 2
        if end >= len(stripped):
            continue
        awards = []
        for j in range(k):
            m = _AWARD_RE.match(stripped[i + 1 + j])
            if not m or int(m.group(1)) != j + 1:
                awards = None
                break
            awards.append(int(m.group(2)))
        if awards is None:
            continue
        m = _TOTAL_RE.match(stripped[i + k + 1])
        if not m or stripped[end] != _BLOCK_END:
            continue
        candidates.append((i, end, awards, int(m.group(1))))
    if not candidates:
        raise UnparseableOutput("model output contains no valid score block")

    start, end, awards, stated_total = candidates[-1]
    warnings = []
    clamped = []
    for idx, (award, possible) in enumerate(zip(awards, points), start=1):
        value = min(max(award, 0), possible)
        if value != award:
            warnings.append(f"criterion {idx}: award {award} clamped into [0, {possible}]")
        clamped.append(value)
    if stated_total != sum(awards):
        warnings.append(f"stated TOTAL {stated_total} differs from award sum {sum(awards)}")
    texts = item.criterion_texts()
    breakdown = [(texts[i], clamped[i], points[i]) for i in range(k)]
    explanation = "\n".join(lines[:start] + lines[end + 1:]).strip()
    return ParsedAssessment(sum(clamped), breakdown, explanation, warnings)


def score_choice(answer: dict | None, question: Question, item: SchemeItem) -> AssessmentResult:
    """All-or-nothing grid scoring: full points exactly when the selected
    set equals the correct set."""
    if question.kind not in CHOICE_KINDS:
        raise KindMismatch(f"question {question.question_id} is {question.kind}, not a choice kind")
    if item.question_id != question.question_id or not item.is_choice:
        raise KindMismatch(f"scheme item does not match choice question {question.question_id}")
    selected = set((answer or {}).get("selected", []))
    correct = set(item.correct_options)
    awarded = item.points if selected == correct else 0
    correct_labels = ", ".join(sorted(correct))
    if not selected:
        verdict = "Nicio opțiune selectată."
    elif awarded:
        verdict = "Răspuns corect."
    else:
        verdict = f"Ai selectat: {', '.join(sorted(selected))}."
    return AssessmentResult(
        submission_id="",
        source=DETERMINISTIC,
        score=awarded,
        breakdown=[(f"varianta corectă: {correct_labels}", awarded, item.points)],
        explanation=f"{verdict} Conform baremului, răspunsul corect este: {correct_labels}.",
        experimental=False,
    )


def _pending_doc(submission_id: str, source: str, error: str, created_at: str) -> dict:
    return {
        "submission_id": submission_id,
        "status": "pending",
        "source": source,
        "score": None,
        "breakdown": [],
        "explanation": "",
        "experimental": source != DETERMINISTIC,
        "raw_output": "",
        "latency_seconds": 0.0,
        "created_at": created_at,
        "warnings": [],
        "error": error,
    }


@dataclass(frozen=True)
class ReportItem:
    question_id: str
    max_points: int
    status: str                     # ok | pending
    score: int | None
    source: str
    experimental: bool
    explanation: str
    breakdown: list
    warnings: list


@dataclass(frozen=True)
class SessionReport:
    session_id: str
    exam_id: str
    status: str
    office_points: int
    total_score: int
    max_total: int
    pending: list[str]              # question ids still awaiting assessment
    items: list[ReportItem]


class AssessmentEngine:
    """Produces and persists one assessment per submission, deterministic
    where possible, model-backed for open text."""

    def __init__(self, store: DocumentStore, exams: ExamStore,
                 gateway: Gateway | None = None, provider_id: str | None = None,
                 sessions: SessionStore | None = None,
                 now: Callable[[], datetime] = _utcnow):
        self._store = store
        self._exams = exams
        self._gateway = gateway
        self._provider_id = provider_id
        self._sessions = sessions
        self._now = now

    def get_assessment(self, submission_id: str) -> dict | None:
        return self._store.get(ASSESSMENTS, submission_id)

    def assess_submission(self, submission_id: str) -> dict:
        """Assess one submission and persist the outcome. Re-running
        overwrites a pending result and never duplicates; a failed model
        call leaves a pending marker, never an exception, so the research
        record survives assessment trouble."""
        sub_doc = self._store.get(SUBMISSIONS, submission_id)
        if sub_doc is None:
            raise NotFound(f"submission {submission_id} not found")
        submission = Submission.from_doc(sub_doc)
        question = self._exams.get_question(submission.exam_id, submission.question_id)
        item = self._exams.get_scheme(submission.exam_id).items[submission.question_id]
        created_at = self._now().isoformat()

        if question.kind in CHOICE_KINDS:
            result = score_choice(submission.answer, question, item)
            result.submission_id = submission_id
            result.created_at = created_at
            doc = result.to_doc()
        elif submission.empty or not (submission.answer or {}).get("text", "").strip():
            result = AssessmentResult(
                submission_id=submission_id,
                source=DETERMINISTIC,
                score=0,
                breakdown=[(t, 0, p) for t, p in item.criteria],
                explanation="Niciun răspuns trimis; 0 puncte conform baremului.",
                experimental=False,
                created_at=created_at,
            )
            doc = result.to_doc()
        else:
            doc = self._assess_open(submission, question, item, created_at)

        self._store.put(ASSESSMENTS, submission_id, doc)
        return doc

    def _assess_open(self, submission: Submission, question: Question,
                     item: SchemeItem, created_at: str) -> dict:
        if self._gateway is None or self._provider_id is None:
            return _pending_doc(submission.submission_id, "model:unconfigured",
                                "no model provider configured", created_at)
        config = self._gateway.provider_config(self._provider_id)
        source = f"model:{self._provider_id}/{config.model_name}"
        prompt = build_prompt(question, submission.answer, item)
        error = "model call failed"
        # one retry on unparseable output, then fail soft
        for _ in range(2):
            record = self._gateway.complete(self._provider_id, prompt)
            if not record.ok:
                error = f"model call failed ({record.outcome})"
                continue
            try:
                parsed = parse_assessment(record.raw_output, item)
            except UnparseableOutput as e:
                error = str(e)
                continue
            result = AssessmentResult(
                submission_id=submission.submission_id,
                source=source,
                score=parsed.score,
                breakdown=parsed.breakdown,
                explanation=parsed.explanation,
                experimental=True,
                raw_output=record.raw_output,
                latency_seconds=record.latency_seconds,
                created_at=created_at,
                warnings=parsed.warnings,
            )
            return result.to_doc()
        return _pending_doc(submission.submission_id, source, error, created_at)

    def assess_session(self, session_id: str) -> list[dict]:
        """Assess every submission of a submitted session; already-complete
        assessments are left untouched."""
        session = self._store.get(SESSIONS, session_id)
        if session is None:
            raise NotFound(f"session {session_id} not found")
        exam = self._exams.get_exam(session["exam_id"])
        docs = []
        all_ok = True
        for question in exam.questions():
            sub_key = submission_key(session_id, question.question_id)
            if self._store.get(SUBMISSIONS, sub_key) is None:
                continue
            existing = self._store.get(ASSESSMENTS, sub_key)
            if existing is not None and existing["status"] == "ok":
                docs.append(existing)
                continue
            doc = self.assess_submission(sub_key)
            docs.append(doc)
            all_ok = all_ok and doc["status"] == "ok"
        if all_ok and docs and self._sessions is not None and session["status"] == "submitted":
            self._sessions.mark_evaluated(session_id)
        return docs

    def session_report(self, session_id: str) -> SessionReport:
        """Score summary for a submitted session: office points plus every
        resolved per-question score, exam order, pending items flagged and
        counted as zero."""
        session = self._store.get(SESSIONS, session_id)
        if session is None:
            raise NotFound(f"session {session_id} not found")
        if session["status"] == "in_progress":
            raise NotSubmitted(f"session {session_id} has not been submitted")
        exam = self._exams.get_exam(session["exam_id"])
        items = []
        pending = []
        total = exam.office_points
        for question in exam.questions():
            sub_id = submission_key(session_id, question.question_id)
            assessment = None
            if self._store.get(SUBMISSIONS, sub_id) is not None:
                assessment = self._store.get(ASSESSMENTS, sub_id)
            if assessment is None or assessment["status"] != "ok":
                pending.append(question.question_id)
                error = (assessment or {}).get("error") or "not yet assessed"
                items.append(ReportItem(
                    question.question_id, question.max_points, "pending", None,
                    (assessment or {}).get("source", ""), bool((assessment or {}).get("experimental")),
                    error, [], list((assessment or {}).get("warnings", [])),
                ))
                continue
            total += assessment["score"]
            items.append(ReportItem(
                question.question_id, question.max_points, "ok", assessment["score"],
                assessment["source"], assessment["experimental"], assessment["explanation"],
                assessment["breakdown"], list(assessment.get("warnings", [])),
            ))
        return SessionReport(
            session_id=session_id,
            exam_id=exam.exam_id,
            status=session["status"],
            office_points=exam.office_points,
            total_score=total,
            max_total=exam.total_points,
            pending=pending,
            items=items,
        )
