"""Offline evaluation: replay stored submissions through model providers
and measure agreement against expert grades.

Expert grades arrive as CSV (submission_id, grader_id, score, breakdown,
graded_at). A consensus policy turns per-grader scores into one ground
truth integer per submission. Evaluation runs are resumable: each
(submission, provider) pair gets exactly one persisted result per run, and
re-running the same run id skips every recorded pair, so an interrupted
run never re-spends model calls it already made.

Agreement metrics (exact agreement rate, MAE, RMSE, quadratic-weighted
kappa) are computed from integer sums with a single float division each,
so an independent reimplementation lands on bit-identical values.
"""

from __future__ import annotations

import csv
import hashlib
import math
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable

import numpy as np

from .assessment import build_prompt, parse_assessment
from .corpus import (
    CHOICE_KINDS,
    ExamStore,
    Question,
    SchemeItem,
    question_from_doc,
    scheme_item_from_doc,
)
from .errors import EmptyIntersection, NotFound, ValidationError
from .gateway import Gateway
from .sessions import SUBMISSIONS, Submission, question_context
from .store import DocumentStore

EXPERT_GRADES = "expert_grades"
EVAL_RUNS = "eval_runs"
EVAL_RESULTS = "eval_results"

CONSENSUS_POLICIES = ("single", "mean_rounded", "median")

_GRADE_HEADER = ["submission_id", "grader_id", "score", "breakdown", "graded_at"]


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _key(*parts: str) -> str:
    return hashlib.sha256("\x00".join(parts).encode("utf-8")).hexdigest()[:32]


def _round_half_up(numerator: int, denominator: int) -> int:
    # deterministic commercial rounding; avoids banker's rounding surprises
    return (2 * numerator + denominator) // (2 * denominator)


@dataclass(frozen=True)
class ExpertGrade:
    submission_id: str
    grader_id: str
    score: int
    breakdown: tuple[int, ...]
    graded_at: str

    def to_doc(self) -> dict:
        return {
            "submission_id": self.submission_id,
            "grader_id": self.grader_id,
            "score": self.score,
            "breakdown": list(self.breakdown),
            "graded_at": self.graded_at,
        }


@dataclass(frozen=True)
class GroundTruth:
    policy: str
    scores: dict[str, int]              # submission_id -> consensus score
    excluded: list[tuple[str, str]]     # (submission_id, reason)


@dataclass(frozen=True)
class AgreementMetrics:
    provider_id: str
    n: int
    exact: float
    mae: float
    rmse: float
    qwk: float
    degenerate: bool                    # kappa denominator was zero
    scale: int                          # scores live in 0..scale


class EvalHarness:
    """Expert-grade ingestion, evaluation runs, and agreement reporting."""

    def __init__(self, store: DocumentStore, exams: ExamStore, gateway: Gateway,
                 now: Callable[[], datetime] = _utcnow):
        self._store = store
        self._exams = exams
        self._gateway = gateway
        self._now = now

    # -- expert grades -----------------------------------------------------

    def ingest_expert_grades(self, lines: Iterable[str]) -> int:
        """Load expert grades from CSV text. Validation failures name the
        offending line. Re-grading (same submission and grader) overwrites."""
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("line 1: empty grade file, expected a header row")
        if header != _GRADE_HEADER:
            raise ValidationError(
                f"line 1: header must be {','.join(_GRADE_HEADER)}")
        count = 0
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(_GRADE_HEADER):
                raise ValidationError(f"line {line}: expected {len(_GRADE_HEADER)} columns, got {len(row)}")
            grade = self._parse_grade_row(row, line)
            self._store.put(EXPERT_GRADES, _key(grade.submission_id, grade.grader_id),
                            grade.to_doc())
            count += 1
        return count

    def _parse_grade_row(self, row: list[str], line: int) -> ExpertGrade:
        submission_id, grader_id, score_s, breakdown_s, graded_at = [c.strip() for c in row]
        if not grader_id:
            raise ValidationError(f"line {line}: grader_id must not be empty")
        sub_doc = self._store.get(SUBMISSIONS, submission_id)
        if sub_doc is None:
            raise ValidationError(f"line {line}: unknown submission {submission_id}")
        submission = Submission.from_doc(sub_doc)
        _, item = self._resolve(submission)
        points = item.criterion_points()
        try:
            score = int(score_s)
            parts = tuple(int(p) for p in breakdown_s.split(";")) if breakdown_s else ()
        except ValueError:
            raise ValidationError(f"line {line}: score and breakdown must be integers")
        try:
            datetime.fromisoformat(graded_at)
        except ValueError:
            raise ValidationError(f"line {line}: graded_at must be ISO-8601, got {graded_at!r}")
        if len(parts) != len(points):
            raise ValidationError(
                f"line {line}: breakdown has {len(parts)} values, scheme has {len(points)} criteria")
        for i, (awarded, possible) in enumerate(zip(parts, points), start=1):
            if not 0 <= awarded <= possible:
                raise ValidationError(
                    f"line {line}: criterion {i} award {awarded} outside [0, {possible}]")
        if score != sum(parts):
            raise ValidationError(
                f"line {line}: score {score} does not equal breakdown sum {sum(parts)}")
        return ExpertGrade(submission_id, grader_id, score, parts, graded_at)

    def expert_grades(self, submission_id: str) -> list[ExpertGrade]:
        grades = []
        for key in self._store.keys(EXPERT_GRADES):
            doc = self._store.get(EXPERT_GRADES, key)
            if doc and doc["submission_id"] == submission_id:
                grades.append(ExpertGrade(doc["submission_id"], doc["grader_id"],
                                          doc["score"], tuple(doc["breakdown"]),
                                          doc["graded_at"]))
        grades.sort(key=lambda g: g.grader_id)
        return grades

    def build_ground_truth(self, submission_ids: Iterable[str],
                           policy: str = "median") -> GroundTruth:
        """Collapse per-grader scores into one integer per submission."""
        if policy not in CONSENSUS_POLICIES:
            raise ValidationError(f"unknown consensus policy {policy!r}")
        scores: dict[str, int] = {}
        excluded: list[tuple[str, str]] = []
        for sub_id in submission_ids:
            values = sorted(g.score for g in self.expert_grades(sub_id))
            if not values:
                excluded.append((sub_id, "no expert grades"))
            elif policy == "single":
                if len(values) > 1:
                    excluded.append((sub_id, f"{len(values)} grades under single policy"))
                else:
                    scores[sub_id] = values[0]
            elif policy == "mean_rounded":
                scores[sub_id] = _round_half_up(sum(values), len(values))
            else:
                mid = len(values) // 2
                if len(values) % 2:
                    scores[sub_id] = values[mid]
                else:
                    scores[sub_id] = _round_half_up(values[mid - 1] + values[mid], 2)
        return GroundTruth(policy, scores, excluded)

    # -- evaluation runs ---------------------------------------------------

    def run_offline_eval(self, submission_ids: list[str], provider_ids: list[str],
                         run_id: str | None = None, concurrency: int = 1) -> dict:
        """Evaluate every (submission, provider) pair once.

        Pairs already recorded under this run id are skipped, which makes
        the run resumable after a crash without duplicate model calls.
        Exceptions from a single pair are recorded as failed results;
        anything more fundamental (BaseException) propagates.
        """
        if not submission_ids:
            raise ValidationError("an evaluation run needs at least one submission")
        if not provider_ids:
            raise ValidationError("an evaluation run needs at least one provider")
        for provider_id in provider_ids:
            self._gateway.provider_config(provider_id)    # raises NotFound early
        for sub_id in submission_ids:
            if self._store.get(SUBMISSIONS, sub_id) is None:
                raise NotFound(f"submission {sub_id} not found")

        run_id = run_id or uuid.uuid4().hex[:16]
        run = self._store.get(EVAL_RUNS, run_id)
        if run is None:
            run = {
                "run_id": run_id,
                "submission_ids": list(submission_ids),
                "provider_ids": list(provider_ids),
                "created_at": self._now().isoformat(),
                "status": "running",
            }
            self._store.put(EVAL_RUNS, run_id, run)
        elif (run["submission_ids"] != list(submission_ids)
              or run["provider_ids"] != list(provider_ids)):
            raise ValidationError(
                f"run {run_id} already exists with a different pair set")

        todo = []
        for sub_id in submission_ids:
            for provider_id in provider_ids:
                if self._store.get(EVAL_RESULTS, _key(run_id, sub_id, provider_id)) is None:
                    todo.append((sub_id, provider_id))
        skipped = len(submission_ids) * len(provider_ids) - len(todo)
        if concurrency <= 1:
            for pair in todo:
                self._eval_pair(run_id, *pair)
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                for future in [pool.submit(self._eval_pair, run_id, *p) for p in todo]:
                    future.result()

        counts = {"ok": 0, "failed": 0, "excluded": 0}
        for sub_id in submission_ids:
            for provider_id in provider_ids:
                doc = self._store.get(EVAL_RESULTS, _key(run_id, sub_id, provider_id))
                counts[doc["status"]] += 1
        run = dict(run)
        run.update(status="complete", n_ok=counts["ok"], n_failed=counts["failed"],
                   n_excluded=counts["excluded"])
        self._store.put(EVAL_RUNS, run_id, run)
        # per-invocation resume info, reported but not persisted
        return dict(run, n_skipped=skipped)

    def _eval_pair(self, run_id: str, sub_id: str, provider_id: str) -> None:
        result = {
            "run_id": run_id,
            "submission_id": sub_id,
            "provider_id": provider_id,
            "status": "failed",
            "score": None,
            "breakdown": [],
            "raw_output": "",
            "error": None,
            "reason": None,
            "latency_seconds": 0.0,
        }
        try:
            submission = Submission.from_doc(self._store.get(SUBMISSIONS, sub_id))
            question, item = self._resolve(submission)
            if question.kind in CHOICE_KINDS:
                result.update(status="excluded", reason="choice questions are scored deterministically")
            elif submission.empty or not (submission.answer or {}).get("text", "").strip():
                result.update(status="excluded", reason="empty answer")
            else:
                record = self._gateway.complete(
                    provider_id, build_prompt(question, submission.answer, item))
                if record.ok:
                    parsed = parse_assessment(record.raw_output, item)
                    result.update(status="ok", score=parsed.score,
                                  breakdown=[list(r) for r in parsed.breakdown],
                                  raw_output=record.raw_output,
                                  latency_seconds=record.latency_seconds)
                else:
                    result.update(error=f"model call failed ({record.outcome})")
        except Exception as e:
            result.update(status="failed", error=f"{type(e).__name__}: {e}")
        self._store.put(EVAL_RESULTS, _key(run_id, sub_id, provider_id), result)

    def _resolve(self, submission: Submission) -> tuple[Question, SchemeItem]:
        """Question and scheme item for a submission, whether the exam lives
        in this store's corpus or came in through a dataset import."""
        _, question_doc, item_doc = question_context(
            self._store, self._exams, submission.exam_id, submission.question_id)
        question = question_from_doc(question_doc)
        return question, scheme_item_from_doc(question, item_doc)

    def get_run(self, run_id: str) -> dict:
        run = self._store.get(EVAL_RUNS, run_id)
        if run is None:
            raise NotFound(f"evaluation run {run_id} not found")
        return run

    def run_results(self, run_id: str) -> list[dict]:
        run = self.get_run(run_id)
        results = []
        for sub_id in run["submission_ids"]:
            for provider_id in run["provider_ids"]:
                doc = self._store.get(EVAL_RESULTS, _key(run_id, sub_id, provider_id))
                if doc is not None:
                    results.append(doc)
        return results

    # -- agreement metrics -------------------------------------------------

    def _pairs(self, run: dict, truth: GroundTruth) -> tuple[dict[str, list[tuple[int, int]]], int]:
        """Per provider: (model, expert) score pairs, submission order; plus
        the pooled scale (max possible points over contributing submissions)."""
        by_provider: dict[str, list[tuple[int, int]]] = {p: [] for p in run["provider_ids"]}
        scale = 0
        for sub_id in run["submission_ids"]:
            if sub_id not in truth.scores:
                continue
            contributed = False
            for provider_id in run["provider_ids"]:
                doc = self._store.get(EVAL_RESULTS, _key(run["run_id"], sub_id, provider_id))
                if doc is not None and doc["status"] == "ok":
                    by_provider[provider_id].append((doc["score"], truth.scores[sub_id]))
                    contributed = True
            if contributed:
                submission = Submission.from_doc(self._store.get(SUBMISSIONS, sub_id))
                _, item = self._resolve(submission)
                scale = max(scale, item.points)
        return by_provider, scale

    def compute_agreement(self, run_id: str, truth: GroundTruth) -> list[AgreementMetrics]:
        """Agreement of each provider with the expert ground truth, over the
        pairs where both sides produced a score."""
        run = self.get_run(run_id)
        by_provider, scale = self._pairs(run, truth)
        metrics = []
        for provider_id in run["provider_ids"]:
            pairs = by_provider[provider_id]
            if not pairs:
                raise EmptyIntersection(
                    f"provider {provider_id}: no submissions have both a model "
                    f"score and a ground truth score")
            metrics.append(agreement_from_pairs(provider_id, pairs, scale))
        return metrics

    def error_analysis(self, run_id: str, truth: GroundTruth,
                       provider_id: str) -> tuple[list[dict], list[dict]]:
        """Largest model-expert gaps first, plus per-question mean gaps."""
        run = self.get_run(run_id)
        if provider_id not in run["provider_ids"]:
            raise NotFound(f"provider {provider_id} is not part of run {run_id}")
        rows = []
        for sub_id in run["submission_ids"]:
            if sub_id not in truth.scores:
                continue
            doc = self._store.get(EVAL_RESULTS, _key(run_id, sub_id, provider_id))
            if doc is None or doc["status"] != "ok":
                continue
            submission = Submission.from_doc(self._store.get(SUBMISSIONS, sub_id))
            gap = abs(doc["score"] - truth.scores[sub_id])
            rows.append({
                "submission_id": sub_id,
                "question_id": submission.question_id,
                "model": doc["score"],
                "expert": truth.scores[sub_id],
                "gap": gap,
            })
        rows.sort(key=lambda r: (-r["gap"], r["submission_id"]))
        totals: dict[str, list[int]] = {}
        for row in rows:
            totals.setdefault(row["question_id"], []).append(row["gap"])
        per_question = [
            {"question_id": qid, "n": len(gaps), "mean_gap": sum(gaps) / len(gaps)}
            for qid, gaps in totals.items()
        ]
        per_question.sort(key=lambda r: (-r["mean_gap"], r["question_id"]))
        return rows, per_question

    # -- reports -------------------------------------------------------

    def render_report(self, run_id: str, truth: GroundTruth, fmt: str = "text") -> str:
        """Agreement report for a run. Byte-deterministic: the same stored
        scores always render the same bytes, so no run ids, timestamps, or
        latencies appear in the body."""
        if fmt not in ("text", "delimited"):
            raise ValidationError(f"unknown report format {fmt!r}")
        run = self.get_run(run_id)
        metrics = self.compute_agreement(run_id, truth)
        analyses = {p: self.error_analysis(run_id, truth, p) for p in run["provider_ids"]}
        if fmt == "delimited":
            return self._render_delimited(run, metrics, analyses)
        return self._render_text(run, truth, metrics, analyses)

    def _render_text(self, run, truth, metrics, analyses) -> str:
        out = [
            "MODEL-EXPERT AGREEMENT",
            "======================",
            "",
            f"consensus policy: {truth.policy}",
            f"score scale: 0..{metrics[0].scale}",
            "",
            f"{'provider':<20} {'n':>5} {'exact':>8} {'mae':>8} {'rmse':>8} {'qwk':>8}",
        ]
        for m in metrics:
            qwk = f"{m.qwk:>8.4f}" + (" (degenerate)" if m.degenerate else "")
            out.append(f"{m.provider_id:<20} {m.n:>5} {m.exact:>8.4f} {m.mae:>8.4f} "
                       f"{m.rmse:>8.4f} {qwk}")
        for provider_id in run["provider_ids"]:
            rows, per_question = analyses[provider_id]
            out += ["", f"LARGEST GAPS: {provider_id}",
                    f"{'submission_id':<34} {'question_id':<16} {'model':>5} {'expert':>6} {'gap':>4}"]
            for r in rows:
                out.append(f"{r['submission_id']:<34} {r['question_id']:<16} "
                           f"{r['model']:>5} {r['expert']:>6} {r['gap']:>4}")
            out += ["", f"PER-QUESTION MEAN GAP: {provider_id}",
                    f"{'question_id':<16} {'n':>5} {'mean_gap':>8}"]
            for r in per_question:
                out.append(f"{r['question_id']:<16} {r['n']:>5} {r['mean_gap']:>8.4f}")
        return "\n".join(out) + "\n"

    def _render_delimited(self, run, metrics, analyses) -> str:
        out = ["kind\tprovider\ta\tb\tc\td\te\tf"]
        for m in metrics:
            out.append("metric\t{}\t{}\t{!r}\t{!r}\t{!r}\t{!r}\t{}".format(
                m.provider_id, m.n, m.exact, m.mae, m.rmse, m.qwk,
                "degenerate" if m.degenerate else "ok"))
        for provider_id in run["provider_ids"]:
            rows, per_question = analyses[provider_id]
            for r in rows:
                out.append(f"gap\t{provider_id}\t{r['submission_id']}\t{r['question_id']}"
                           f"\t{r['model']}\t{r['expert']}\t{r['gap']}")
            for r in per_question:
                out.append("question\t{}\t{}\t{}\t{!r}\t\t".format(
                    provider_id, r["question_id"], r["n"], r["mean_gap"]))
        return "\n".join(out) + "\n"


def agreement_from_pairs(provider_id: str, pairs: list[tuple[int, int]], scale: int) -> AgreementMetrics:
    """Integer-sum metrics over (model, expert) pairs; one float division
    per metric keeps them reproducible to the bit."""
    n = len(pairs)
    model = np.array([p[0] for p in pairs], dtype=np.int64)
    expert = np.array([p[1] for p in pairs], dtype=np.int64)
    diff = model - expert
    exact_hits = int((diff == 0).sum())
    abs_sum = int(np.abs(diff).sum())
    sq_sum = int((diff * diff).sum())

    # quadratic-weighted kappa over categories 0..scale, all in integers
    span = np.arange(scale + 1, dtype=np.int64)
    weights = (span[:, None] - span[None, :]) ** 2
    observed = np.zeros((scale + 1, scale + 1), dtype=np.int64)
    np.add.at(observed, (model, expert), 1)
    hist_model = np.bincount(model, minlength=scale + 1)
    hist_expert = np.bincount(expert, minlength=scale + 1)
    numerator = n * int((weights * observed).sum())
    denominator = int((weights * np.outer(hist_model, hist_expert)).sum())
    degenerate = denominator == 0
    if degenerate:
        # both distributions sit on a single shared category
        qwk = 1.0 if numerator == 0 else 0.0
    else:
        qwk = 1.0 - numerator / denominator

    return AgreementMetrics(
        provider_id=provider_id,
        n=n,
        exact=exact_hits / n,
        mae=abs_sum / n,
        rmse=math.sqrt(sq_sum / n),
        qwk=qwk,
        degenerate=degenerate,
        scale=scale,
    )
