"""Canonical trial records, rollout-log ingestion, and campaign validation.

A rollout log is JSONL: one record per line, append friendly, tolerant of
unknown fields (they round-trip untouched). Parsing collects bad lines
instead of dying on the first one; duplicate rollout ids are always fatal
because every downstream count assumes ids are unique.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

SCHEMA_VERSION = 1

TERMINAL_REASONS = ("success", "timeout", "dangerous", "stuck", "operator_stop")

CONDITION_KINDS = ("nominal", "distribution_shift", "station_shift", "object_shift")

HORIZON_CLASSES = ("short", "long")


class RolloutLogError(ValueError):
    """A rollout log could not be turned into a usable store."""


class DuplicateRolloutIdError(RolloutLogError):
    pass


class UnknownRolloutError(KeyError):
    pass


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp, accepting a trailing Z for UTC."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    return datetime.fromisoformat(text)


@dataclass(frozen=True)
class PolicyRef:
    """A policy under evaluation plus its session-scoped blinding code."""

    policy_id: str
    display_name: str = ""
    blinding_code: str | None = None

    def __post_init__(self) -> None:
        if not self.policy_id:
            raise ValueError("policy_id must be nonempty")
        if self.blinding_code is not None and self.blinding_code == self.policy_id:
            raise ValueError(f"blinding code equals policy id: {self.policy_id}")


@dataclass(frozen=True)
class TaskRef:
    task_id: str
    scenario: str = ""
    horizon_class: str = "short"
    seen_in_pretraining: bool = True

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be nonempty")
        if self.horizon_class not in HORIZON_CLASSES:
            raise ValueError(f"unknown horizon_class: {self.horizon_class!r}")


@dataclass(frozen=True)
class ConditionTag:
    """Evaluation condition: a kind plus a free-form detail tag."""

    kind: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind: {self.kind!r}")

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.detail}" if self.detail else self.kind

    def to_wire(self) -> dict[str, str]:
        wire = {"kind": self.kind}
        if self.detail:
            wire["detail"] = self.detail
        return wire

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "ConditionTag":
        return cls(kind=wire["kind"], detail=wire.get("detail", ""))


@dataclass(frozen=True)
class PredicateTrace:
    """Timestamped boolean series for one scripted predicate."""

    predicate_id: str
    series: tuple[tuple[float, bool], ...]

    def to_wire(self) -> list[Any]:
        return [self.predicate_id, [[t, v] for t, v in self.series]]

    @classmethod
    def from_wire(cls, wire: Sequence[Any]) -> "PredicateTrace":
        pred_id, series = wire
        return cls(str(pred_id), tuple((float(t), bool(v)) for t, v in series))


@dataclass(frozen=True)
class RolloutRecord:
    """One evaluated trial of one policy on one task.

    `policy` holds a blinding code while a session is blind and a plain
    policy id after unblinding; the model does not care which.
    `rubric_answers` is empty until an evaluator submits the questionnaire.
    `evaluator_id` is optional and only needed where review provenance
    matters (QA cross-checks, self-review blocking). Unknown wire fields
    land in `extras` and survive a serialize round trip bit for bit.
    """

    rollout_id: str
    task: str
    policy: str
    condition: ConditionTag
    station: str
    started_at: str
    ended_at: str
    success: bool
    terminal_reason: str
    rubric_answers: tuple[bool, ...] = ()
    predicate_traces: tuple[PredicateTrace, ...] = ()
    bundle_id: str | None = None
    evaluator_id: str | None = None
    schema_version: int = SCHEMA_VERSION
    extras: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.terminal_reason not in TERMINAL_REASONS:
            raise ValueError(f"unknown terminal_reason: {self.terminal_reason!r}")

    def to_wire(self) -> dict[str, Any]:
        wire: dict[str, Any] = {
            "schema_version": self.schema_version,
            "rollout_id": self.rollout_id,
            "task": self.task,
            "policy": self.policy,
            "condition": self.condition.to_wire(),
            "station": self.station,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "success": self.success,
            "terminal_reason": self.terminal_reason,
        }
        if self.bundle_id is not None:
            wire["bundle_id"] = self.bundle_id
        if self.evaluator_id is not None:
            wire["evaluator_id"] = self.evaluator_id
        if self.rubric_answers:
            wire["rubric_answers"] = list(self.rubric_answers)
        if self.predicate_traces:
            wire["predicate_traces"] = [p.to_wire() for p in self.predicate_traces]
        wire.update(dict(self.extras))
        return wire

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "RolloutRecord":
        known = {
            "schema_version",
            "rollout_id",
            "task",
            "policy",
            "condition",
            "station",
            "started_at",
            "ended_at",
            "success",
            "terminal_reason",
            "bundle_id",
            "evaluator_id",
            "rubric_answers",
            "predicate_traces",
        }
        for name in (
            "rollout_id",
            "task",
            "policy",
            "condition",
            "station",
            "started_at",
            "ended_at",
            "success",
            "terminal_reason",
        ):
            if name not in wire:
                raise ValueError(f"missing field: {name}")
        if not isinstance(wire["success"], bool):
            raise ValueError("success must be a boolean")
        reason = wire["terminal_reason"]
        if reason not in TERMINAL_REASONS:
            raise ValueError(f"unknown terminal_reason: {reason!r}")
        started = parse_timestamp(wire["started_at"])
        ended = parse_timestamp(wire["ended_at"])
        if ended < started:
            raise ValueError("ended_at precedes started_at")
        answers = wire.get("rubric_answers") or []
        if not all(isinstance(a, bool) for a in answers):
            raise ValueError("rubric_answers must be booleans")
        traces = tuple(PredicateTrace.from_wire(p) for p in wire.get("predicate_traces") or [])
        extras = tuple(sorted((k, v) for k, v in wire.items() if k not in known))
        return cls(
            rollout_id=str(wire["rollout_id"]),
            task=str(wire["task"]),
            policy=str(wire["policy"]),
            condition=ConditionTag.from_wire(wire["condition"]),
            station=str(wire["station"]),
            started_at=wire["started_at"],
            ended_at=wire["ended_at"],
            success=wire["success"],
            terminal_reason=reason,
            rubric_answers=tuple(answers),
            predicate_traces=traces,
            bundle_id=None if wire.get("bundle_id") is None else str(wire["bundle_id"]),
            evaluator_id=None if wire.get("evaluator_id") is None else str(wire["evaluator_id"]),
            schema_version=int(wire.get("schema_version", SCHEMA_VERSION)),
            extras=extras,
        )


@dataclass(frozen=True)
class CellCounts:
    """Success tally for one (task, policy, condition) cell."""

    successes: int
    trials: int
    dangerous: int = 0

    @property
    def rate(self) -> float | None:
        return None if self.trials == 0 else self.successes / self.trials


CellKey = tuple[str, str, str]  # (task, policy, condition label)


class RolloutStore:
    """Immutable collection of records with per-cell indexes.

    Equality is order insensitive: two stores holding the same set of
    records compare equal no matter the ingest order.
    """

    def __init__(
        self,
        records: Iterable[RolloutRecord],
        rejected: Sequence[tuple[int, str]] = (),
    ) -> None:
        self._records = tuple(records)
        self._rejected = tuple(rejected)
        self._by_id: dict[str, RolloutRecord] = {}
        self._cells: dict[CellKey, list[RolloutRecord]] = defaultdict(list)
        for rec in self._records:
            if rec.rollout_id in self._by_id:
                raise DuplicateRolloutIdError(f"duplicate rollout_id: {rec.rollout_id}")
            self._by_id[rec.rollout_id] = rec
            self._cells[(rec.task, rec.policy, rec.condition.label)].append(rec)

    @property
    def records(self) -> tuple[RolloutRecord, ...]:
        return self._records

    @property
    def rejected(self) -> tuple[tuple[int, str], ...]:
        """(line_number, reason) pairs for lines the parser dropped."""
        return self._rejected

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[RolloutRecord]:
        return iter(self._records)

    def __contains__(self, rollout_id: str) -> bool:
        return rollout_id in self._by_id

    def get(self, rollout_id: str) -> RolloutRecord:
        try:
            return self._by_id[rollout_id]
        except KeyError:
            raise UnknownRolloutError(rollout_id) from None

    def cell_keys(self) -> tuple[CellKey, ...]:
        return tuple(sorted(self._cells))

    def cell(self, task: str, policy: str, condition: str) -> tuple[RolloutRecord, ...]:
        return tuple(self._cells.get((task, policy, condition), ()))

    def counts(
        self, task: str, policy: str, condition: str, include_dangerous: bool = True
    ) -> CellCounts:
        """Tally one cell. Dangerous halts count as failed trials by default;
        include_dangerous=False drops them from the denominator instead."""
        recs = self._cells.get((task, policy, condition), ())
        dangerous = sum(1 for r in recs if r.terminal_reason == "dangerous")
        if not include_dangerous:
            recs = [r for r in recs if r.terminal_reason != "dangerous"]
        return CellCounts(
            successes=sum(1 for r in recs if r.success),
            trials=len(recs),
            dangerous=dangerous,
        )

    def tasks(self) -> tuple[str, ...]:
        return tuple(sorted({r.task for r in self._records}))

    def policies(self) -> tuple[str, ...]:
        return tuple(sorted({r.policy for r in self._records}))

    def condition_labels(self) -> tuple[str, ...]:
        return tuple(sorted({r.condition.label for r in self._records}))

    def merge(self, other: "RolloutStore") -> "RolloutStore":
        return RolloutStore(self._records + other.records, self._rejected + other.rejected)

    def _canonical(self) -> dict[str, str]:
        return {
            rid: json.dumps(rec.to_wire(), sort_keys=True)
            for rid, rec in self._by_id.items()
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RolloutStore):
            return NotImplemented
        return self._canonical() == other._canonical()

    def __hash__(self) -> int:  # pragma: no cover - stores are not dict keys
        return hash(frozenset(self._canonical().items()))


def parse_rollout_log(
    path: str | Path,
    format: str = "jsonl",
    rubric_lengths: Mapping[str, int] | None = None,
) -> RolloutStore:
    """Parse a JSONL rollout log into a store.

    Malformed lines are collected on store.rejected with their 1-based line
    numbers. When `rubric_lengths` maps task ids to questionnaire lengths,
    records with a nonempty answer vector of the wrong length are rejected
    too. A log where every nonblank line fails is an error, as is any
    duplicated rollout id.
    """
    if format != "jsonl":
        raise RolloutLogError(f"unsupported log format: {format!r}")
    path = Path(path)
    records: list[RolloutRecord] = []
    rejected: list[tuple[int, str]] = []
    saw_content = False
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            saw_content = True
            try:
                wire = json.loads(line)
            except json.JSONDecodeError as exc:
                rejected.append((lineno, f"invalid json: {exc.msg}"))
                continue
            try:
                rec = RolloutRecord.from_wire(wire)
            except (ValueError, KeyError, TypeError) as exc:
                rejected.append((lineno, str(exc)))
                continue
            if rubric_lengths is not None and rec.rubric_answers:
                expected = rubric_lengths.get(rec.task)
                if expected is not None and len(rec.rubric_answers) != expected:
                    rejected.append(
                        (
                            lineno,
                            "rubric length mismatch: got "
                            f"{len(rec.rubric_answers)}, expected {expected} for {rec.task}",
                        )
                    )
                    continue
            records.append(rec)
    if saw_content and not records:
        raise RolloutLogError(f"{path}: no parseable records ({len(rejected)} rejected lines)")
    return RolloutStore(records, rejected)


def write_rollout_log(store: RolloutStore, path: str | Path) -> None:
    """Write a store back out as JSONL, one canonical record per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in store.records:
            fh.write(json.dumps(rec.to_wire(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class CellValidation:
    key: CellKey
    expected: int
    observed: int

    @property
    def missing(self) -> int:
        return max(0, self.expected - self.observed)

    @property
    def overrun(self) -> int:
        return max(0, self.observed - self.expected)


@dataclass(frozen=True)
class ValidationReport:
    """Per-cell expected vs observed trial counts; never mutates the store."""

    cells: tuple[CellValidation, ...]

    @property
    def complete(self) -> bool:
        return all(c.expected == c.observed for c in self.cells)

    @property
    def short_cells(self) -> tuple[CellValidation, ...]:
        return tuple(c for c in self.cells if c.missing)

    @property
    def by_key(self) -> dict[CellKey, CellValidation]:
        return {c.key: c for c in self.cells}

    @property
    def total_missing(self) -> int:
        return sum(c.missing for c in self.cells)

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "task": c.key[0],
                "policy": c.key[1],
                "condition": c.key[2],
                "expected": c.expected,
                "observed": c.observed,
                "missing": c.missing,
                "overrun": c.overrun,
            }
            for c in self.cells
        ]


def validate_store(store: RolloutStore, plan: Mapping[CellKey, int]) -> ValidationReport:
    """Compare observed cell counts against a planned-trials mapping.

    Cells present in the store but absent from the plan are reported with
    expected=0, so surprise data is as visible as missing data.
    """
    for key, expected in plan.items():
        if expected < 0:
            raise ValueError(f"plan for {key} is negative")
    keys = sorted(set(plan) | set(store.cell_keys()))
    cells = tuple(
        CellValidation(
            key=key,
            expected=int(plan.get(key, 0)),
            observed=len(store.cell(*key)),
        )
        for key in keys
    )
    return ValidationReport(cells)
