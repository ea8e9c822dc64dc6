"""Rubric and predicate scoring, QA cross-review arithmetic, corrections.

Task completion is a rational on the lattice {0, 1/m, ..., 1} where m is the
number of milestone questions for the task. Failure-mode questions ride along
on the questionnaire (and count toward QA discrepancy) but never contribute
completion credit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .rollout import RolloutRecord, RolloutStore, UnknownRolloutError

SPEC_SCHEMA_VERSION = 1


class ScoringError(ValueError):
    pass


class LengthMismatchError(ScoringError):
    pass


class TraceError(ScoringError):
    pass


@dataclass(frozen=True)
class RubricSpec:
    """Questionnaire for one task: milestones in canonical order, then
    failure-mode questions."""

    task_id: str
    milestones: tuple[str, ...]
    failure_questions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.milestones:
            raise ScoringError(f"{self.task_id}: rubric needs at least one milestone")
        questions = self.milestones + self.failure_questions
        if len(set(questions)) != len(questions):
            raise ScoringError(f"{self.task_id}: duplicate question text")

    @property
    def milestone_count(self) -> int:
        return len(self.milestones)

    @property
    def question_count(self) -> int:
        return len(self.milestones) + len(self.failure_questions)

    @property
    def questions(self) -> tuple[str, ...]:
        return self.milestones + self.failure_questions


@dataclass(frozen=True)
class PredicateSpec:
    """Scripted predicates for one simulation task.

    success_mode "latched": success once every success_conjunction predicate
    has been true at some instant within the timeout. "final": every
    success_conjunction predicate must be true at its last sample in the
    window.
    """

    task_id: str
    predicates: tuple[str, ...]
    success_conjunction: tuple[str, ...] = ()
    success_mode: str = "latched"

    def __post_init__(self) -> None:
        if not self.predicates:
            raise ScoringError(f"{self.task_id}: needs at least one predicate")
        if self.success_mode not in ("latched", "final"):
            raise ScoringError(f"unknown success_mode: {self.success_mode!r}")
        unknown = set(self.success_conjunction) - set(self.predicates)
        if unknown:
            raise ScoringError(
                f"success_conjunction references unknown predicates: {sorted(unknown)}"
            )

    @property
    def success_predicates(self) -> tuple[str, ...]:
        return self.success_conjunction if self.success_conjunction else self.predicates


@dataclass(frozen=True, order=True)
class TaskCompletion:
    """Milestone credit as an exact k/m rational.

    `achieved` is a bitmask over milestone positions (bit i set when
    milestone i earned credit), so the value survives any milestone
    reordering as a pure count.
    """

    achieved: int
    milestone_count: int

    def __post_init__(self) -> None:
        if self.milestone_count < 1:
            raise ScoringError(f"milestone_count must be positive, got {self.milestone_count}")
        if not 0 <= self.achieved < (1 << self.milestone_count):
            raise ScoringError(
                f"achieved mask {self.achieved:#x} outside {self.milestone_count} milestones"
            )

    @classmethod
    def from_count(cls, achieved_count: int, milestone_count: int) -> "TaskCompletion":
        if not 0 <= achieved_count <= milestone_count:
            raise ScoringError(f"achieved count {achieved_count} outside [0, {milestone_count}]")
        return cls(achieved=(1 << achieved_count) - 1, milestone_count=milestone_count)

    @property
    def achieved_count(self) -> int:
        return self.achieved.bit_count()

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.achieved_count, self.milestone_count)

    @property
    def value(self) -> float:
        return self.achieved_count / self.milestone_count

    def __float__(self) -> float:
        return self.value


def score_rubric(answers: Sequence[bool], spec: RubricSpec) -> TaskCompletion:
    """Score an answer vector against a rubric.

    Accepts either the milestone prefix alone or the full questionnaire
    (milestones followed by failure questions). Any other length raises.
    """
    n = len(answers)
    if n not in (spec.milestone_count, spec.question_count):
        raise LengthMismatchError(
            f"rubric length mismatch: got {n} answers, expected "
            f"{spec.milestone_count} or {spec.question_count} for {spec.task_id}"
        )
    mask = 0
    for i, answer in enumerate(answers[: spec.milestone_count]):
        if answer:
            mask |= 1 << i
    return TaskCompletion(achieved=mask, milestone_count=spec.milestone_count)


@dataclass(frozen=True)
class PredicateScore:
    success: bool
    completion: TaskCompletion
    achieved_predicates: tuple[str, ...]


def _latched(series: Sequence[tuple[float, bool]], timeout_s: float) -> bool:
    return any(v for t, v in series if t <= timeout_s)


def _final(series: Sequence[tuple[float, bool]], timeout_s: float) -> bool:
    window = [(t, v) for t, v in series if t <= timeout_s]
    return bool(window) and window[-1][1]


def score_predicates(
    traces: Iterable[Any],
    spec: PredicateSpec,
    timeout_s: float,
) -> PredicateScore:
    """Score scripted predicate traces for one rollout.

    `traces` is an iterable of PredicateTrace or (predicate_id, series)
    pairs. Samples after the timeout are ignored. Traces must cover every
    predicate in `spec`, with nondecreasing nonnegative timestamps.
    """
    if timeout_s <= 0:
        raise TraceError(f"timeout must be positive, got {timeout_s}")
    by_id: dict[str, tuple[tuple[float, bool], ...]] = {}
    for trace in traces:
        if hasattr(trace, "predicate_id"):
            pred_id, series = trace.predicate_id, trace.series
        else:
            pred_id, raw = trace
            series = tuple((float(t), bool(v)) for t, v in raw)
        if pred_id in by_id:
            raise TraceError(f"duplicate trace for predicate {pred_id}")
        last = None
        for t, _ in series:
            if t < 0:
                raise TraceError(f"{pred_id}: negative timestamp {t}")
            if last is not None and t < last:
                raise TraceError(f"{pred_id}: non-monotone timestamps ({last} then {t})")
            last = t
        by_id[pred_id] = series
    missing = [p for p in spec.predicates if p not in by_id]
    if missing:
        raise TraceError(f"missing traces for predicates: {missing}")

    mask = 0
    achieved = []
    for i, pred in enumerate(spec.predicates):
        if _latched(by_id[pred], timeout_s):
            mask |= 1 << i
            achieved.append(pred)
    check = _latched if spec.success_mode == "latched" else _final
    success = all(check(by_id[p], timeout_s) for p in spec.success_predicates)
    completion = TaskCompletion(achieved=mask, milestone_count=len(spec.predicates))
    return PredicateScore(
        success=success, completion=completion, achieved_predicates=tuple(achieved)
    )


def rubric_lengths(specs: Iterable[RubricSpec]) -> dict[str, int]:
    """task_id -> full questionnaire length, for rollout-log validation."""
    return {s.task_id: s.question_count for s in specs}


def load_rubric_specs(path: str | Path) -> dict[str, RubricSpec]:
    """Load rubric specs from a JSON file: a list of per-task objects."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["rubrics"] if isinstance(doc, Mapping) else doc
    specs: dict[str, RubricSpec] = {}
    for item in items:
        spec = RubricSpec(
            task_id=item["task_id"],
            milestones=tuple(item["milestones"]),
            failure_questions=tuple(item.get("failure_questions", ())),
        )
        if spec.task_id in specs:
            raise ScoringError(f"duplicate rubric for task {spec.task_id}")
        specs[spec.task_id] = spec
    return specs


def load_predicate_specs(path: str | Path) -> dict[str, PredicateSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["predicates"] if isinstance(doc, Mapping) else doc
    specs: dict[str, PredicateSpec] = {}
    for item in items:
        spec = PredicateSpec(
            task_id=item["task_id"],
            predicates=tuple(item["predicates"]),
            success_conjunction=tuple(item.get("success_conjunction", ())),
            success_mode=item.get("success_mode", "latched"),
        )
        if spec.task_id in specs:
            raise ScoringError(f"duplicate predicate spec for task {spec.task_id}")
        specs[spec.task_id] = spec
    return specs


@dataclass(frozen=True)
class QAReview:
    """Independent second pass over one rollout's video."""

    rollout_id: str
    reviewer_id: str
    reviewed_success: bool
    reviewed_answers: tuple[bool, ...]


@dataclass(frozen=True)
class QAReport:
    """Aggregate disagreement rates between original and review passes."""

    reviewed: int
    success_mismatches: int
    question_pairs: int
    question_mismatches: int

    @property
    def success_discrepancy(self) -> float:
        if self.reviewed == 0:
            raise ScoringError("no reviews to aggregate")
        return self.success_mismatches / self.reviewed

    @property
    def question_discrepancy(self) -> float:
        if self.question_pairs == 0:
            raise ScoringError("no question pairs to aggregate")
        return self.question_mismatches / self.question_pairs


def qa_discrepancy(originals: RolloutStore, reviews: Sequence[QAReview]) -> QAReport:
    """Compare reviews against original records, position by position.

    Success flags are compared per review; rubric answers are compared per
    question. Reviews of unknown rollouts, self-reviews (when the original
    evaluator is recorded), duplicate reviews, and length mismatches raise.
    The rates are symmetric: swapping original and review answers changes
    nothing.
    """
    seen: set[str] = set()
    success_mismatches = 0
    question_pairs = 0
    question_mismatches = 0
    for review in reviews:
        record = originals.get(review.rollout_id)  # raises UnknownRolloutError
        if review.rollout_id in seen:
            raise ScoringError(f"duplicate review for rollout {review.rollout_id}")
        seen.add(review.rollout_id)
        if record.evaluator_id is not None and record.evaluator_id == review.reviewer_id:
            raise ScoringError(
                f"self-review: {review.reviewer_id} evaluated and reviewed {review.rollout_id}"
            )
        if len(review.reviewed_answers) != len(record.rubric_answers):
            raise LengthMismatchError(
                f"rubric length mismatch: review of {review.rollout_id} has "
                f"{len(review.reviewed_answers)} answers, original has "
                f"{len(record.rubric_answers)}"
            )
        success_mismatches += int(review.reviewed_success != record.success)
        question_pairs += len(record.rubric_answers)
        question_mismatches += sum(
            int(a != b) for a, b in zip(record.rubric_answers, review.reviewed_answers)
        )
    return QAReport(
        reviewed=len(seen),
        success_mismatches=success_mismatches,
        question_pairs=question_pairs,
        question_mismatches=question_mismatches,
    )


CORRECTABLE_FIELDS = ("success", "rubric_answers", "terminal_reason")


@dataclass(frozen=True)
class Correction:
    rollout_id: str
    field: str
    new_value: Any
    reason: str = ""


@dataclass(frozen=True)
class AuditEntry:
    rollout_id: str
    field: str
    old_value: Any
    new_value: Any
    reason: str = ""


def apply_corrections(
    store: RolloutStore, corrections: Sequence[Correction]
) -> tuple[RolloutStore, tuple[AuditEntry, ...]]:
    """Produce a corrected copy of the store plus an old-to-new audit trail.

    The input store is untouched. Re-applying a correction that is already
    in effect is a no-op that still logs the (equal) transition.
    """
    current: dict[str, RolloutRecord] = {r.rollout_id: r for r in store.records}
    audit: list[AuditEntry] = []
    for corr in corrections:
        if corr.field not in CORRECTABLE_FIELDS:
            raise ScoringError(f"field not correctable: {corr.field!r}")
        if corr.rollout_id not in current:
            raise UnknownRolloutError(corr.rollout_id)
        record = current[corr.rollout_id]
        old = getattr(record, corr.field)
        new = corr.new_value
        if corr.field == "rubric_answers":
            new = tuple(bool(a) for a in new)
        current[corr.rollout_id] = replace(record, **{corr.field: new})
        audit.append(
            AuditEntry(
                rollout_id=corr.rollout_id,
                field=corr.field,
                old_value=old,
                new_value=new,
                reason=corr.reason,
            )
        )
    order = [r.rollout_id for r in store.records]
    return RolloutStore(current[rid] for rid in order), tuple(audit)


def success_rubric_conflicts(
    store: RolloutStore, specs: Mapping[str, RubricSpec]
) -> tuple[str, ...]:
    """Rollout ids whose operator success flag disagrees with the rubric.

    The flag is an independent judgment, so disagreement is a lint signal
    for QA attention, not an error.
    """
    conflicts = []
    for rec in store.records:
        spec = specs.get(rec.task)
        if spec is None or not rec.rubric_answers:
            continue
        tc = score_rubric(rec.rubric_answers, spec)
        if rec.success != (tc.achieved_count == spec.milestone_count):
            conflicts.append(rec.rollout_id)
    return tuple(conflicts)
