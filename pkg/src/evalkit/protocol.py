"""Blind, randomized, bundle-based evaluation sessions.

A session pits k policies against each other behind fresh blinding codes.
Each bundle fixes one initial condition and holds one slot per policy in a
random order; evaluators drain bundles strictly in sequence so every policy
sees the same IC before the scene changes. State persists as an append-only
event log; current state is a pure fold of events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .rollout import ConditionTag, PolicyRef

SLOT_PENDING = "pending"
SLOT_RUNNING = "running"
SLOT_DONE = "done"
SLOT_ABORTED = "aborted"

TERMINAL_SLOT_STATES = (SLOT_DONE, SLOT_ABORTED)

IC_SOURCES = ("simulation_sampled", "manual")

EVENT_SESSION_CREATED = "session_created"
EVENT_SLOT_STARTED = "slot_started"
EVENT_SLOT_FINISHED = "slot_finished"
EVENT_UNBLIND = "unblind_performed"


class ProtocolError(ValueError):
    pass


class SessionExhaustedError(ProtocolError):
    """Every bundle has reached a terminal state."""


class BundleBusyError(ProtocolError):
    """The active bundle has running slots but nothing pending."""


class IllegalTransitionError(ProtocolError):
    pass


class UnauthorizedError(PermissionError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    ic_id: str
    task_id: str
    overlay_asset: str
    source: str = "manual"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.source not in IC_SOURCES:
            raise ProtocolError(f"unknown IC source: {self.source!r}")
        if (self.seed is not None) != (self.source == "simulation_sampled"):
            raise ProtocolError("seed present iff source is simulation_sampled")

    def to_wire(self) -> dict[str, Any]:
        wire: dict[str, Any] = {
            "ic_id": self.ic_id,
            "task_id": self.task_id,
            "overlay_asset": self.overlay_asset,
            "source": self.source,
        }
        if self.seed is not None:
            wire["seed"] = self.seed
        return wire

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "InitialCondition":
        return cls(
            ic_id=wire["ic_id"],
            task_id=wire["task_id"],
            overlay_asset=wire["overlay_asset"],
            source=wire.get("source", "manual"),
            seed=wire.get("seed"),
        )


@dataclass
class Slot:
    status: str = SLOT_PENDING
    rollout_id: str | None = None
    evaluator_id: str | None = None
    retries: int = 0
    aborted_rollout_ids: tuple[str, ...] = ()

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_SLOT_STATES

    def to_wire(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "rollout_id": self.rollout_id,
            "evaluator_id": self.evaluator_id,
            "retries": self.retries,
            "aborted_rollout_ids": list(self.aborted_rollout_ids),
        }

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "Slot":
        return cls(
            status=wire["status"],
            rollout_id=wire.get("rollout_id"),
            evaluator_id=wire.get("evaluator_id"),
            retries=int(wire.get("retries", 0)),
            aborted_rollout_ids=tuple(wire.get("aborted_rollout_ids", ())),
        )


@dataclass
class Bundle:
    bundle_id: str
    ic: InitialCondition
    ordering: tuple[str, ...]
    slots: list[Slot]

    def __post_init__(self) -> None:
        if len(self.ordering) != len(set(self.ordering)):
            raise ProtocolError(f"{self.bundle_id}: ordering repeats a code")
        if len(self.slots) != len(self.ordering):
            raise ProtocolError(f"{self.bundle_id}: slot count != ordering length")

    @property
    def complete(self) -> bool:
        return all(slot.terminal for slot in self.slots)

    def next_pending(self) -> int | None:
        for index, slot in enumerate(self.slots):
            if slot.status == SLOT_PENDING:
                return index
        return None

    def to_wire(self) -> dict[str, Any]:
        return {
            "bundle_id": self.bundle_id,
            "ic": self.ic.to_wire(),
            "ordering": list(self.ordering),
            "slots": [slot.to_wire() for slot in self.slots],
        }

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "Bundle":
        return cls(
            bundle_id=wire["bundle_id"],
            ic=InitialCondition.from_wire(wire["ic"]),
            ordering=tuple(wire["ordering"]),
            slots=[Slot.from_wire(s) for s in wire["slots"]],
        )


@dataclass(frozen=True)
class Assignment:
    """What an evaluator sees: a blinded slot plus its initial condition."""

    bundle_id: str
    slot: int
    blinding_code: str
    ic: InitialCondition

    def to_wire(self) -> dict[str, Any]:
        return {
            "bundle_id": self.bundle_id,
            "slot": self.slot,
            "blinding_code": self.blinding_code,
            "ic": self.ic.to_wire(),
        }


@dataclass(frozen=True)
class Authorization:
    actor_id: str
    role: str  # evaluator | qa_reviewer | analyst


@dataclass
class Session:
    """Mutable session state under a single-writer contract.

    Mutation happens only through record_slot (and unblind's audit append);
    concurrent readers must hold a snapshot via to_wire().
    """

    session_id: str
    policies: tuple[PolicyRef, ...]
    tasks: tuple[str, ...]
    condition: ConditionTag
    bundles: list[Bundle]
    rng_seed: int
    evaluator_ids: frozenset[str] = frozenset()
    qa_reviewer_ids: frozenset[str] = frozenset()
    audit: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [p.policy_id for p in self.policies]
        if len(set(ids)) != len(ids):
            raise ProtocolError("duplicate policy ids")
        codes = [p.blinding_code for p in self.policies]
        if None in codes or len(set(codes)) != len(codes):
            raise ProtocolError("blinding codes must be present and unique")
        if set(codes) & set(ids):
            raise ProtocolError("a blinding code collides with a policy id")
        overlap = self.evaluator_ids & self.qa_reviewer_ids
        if overlap:
            raise ProtocolError(f"evaluators and qa reviewers overlap: {sorted(overlap)}")
        # The bundle list is fixed after construction and completeness is
        # absorbing (done/aborted are terminal), so lookups can be indexed and
        # the drain cursor only ever moves forward.
        self._bundles_by_id = {b.bundle_id: b for b in self.bundles}
        if len(self._bundles_by_id) != len(self.bundles):
            raise ProtocolError("duplicate bundle ids")
        self._drain_cursor = 0

    @property
    def k(self) -> int:
        return len(self.policies)

    @property
    def total_slots(self) -> int:
        return sum(len(b.slots) for b in self.bundles)

    @property
    def done_slots(self) -> int:
        return sum(1 for b in self.bundles for s in b.slots if s.status == SLOT_DONE)

    @property
    def complete(self) -> bool:
        return all(b.complete for b in self.bundles)

    @property
    def missing_slots(self) -> tuple[tuple[str, int], ...]:
        """(bundle_id, slot) pairs that ended aborted after the retry."""
        return tuple(
            (b.bundle_id, i)
            for b in self.bundles
            for i, s in enumerate(b.slots)
            if s.status == SLOT_ABORTED
        )

    def code_to_policy(self) -> dict[str, str]:
        return {p.blinding_code: p.policy_id for p in self.policies}

    def bundle(self, bundle_id: str) -> Bundle:
        try:
            return self._bundles_by_id[bundle_id]
        except KeyError:
            raise ProtocolError(f"unknown bundle: {bundle_id}") from None

    def to_wire(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "policies": [
                {
                    "policy_id": p.policy_id,
                    "display_name": p.display_name,
                    "blinding_code": p.blinding_code,
                }
                for p in self.policies
            ],
            "tasks": list(self.tasks),
            "condition": self.condition.to_wire(),
            "bundles": [b.to_wire() for b in self.bundles],
            "rng_seed": self.rng_seed,
            "evaluator_ids": sorted(self.evaluator_ids),
            "qa_reviewer_ids": sorted(self.qa_reviewer_ids),
        }

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "Session":
        return cls(
            session_id=wire["session_id"],
            policies=tuple(
                PolicyRef(
                    policy_id=p["policy_id"],
                    display_name=p.get("display_name", ""),
                    blinding_code=p["blinding_code"],
                )
                for p in wire["policies"]
            ),
            tasks=tuple(wire["tasks"]),
            condition=ConditionTag.from_wire(wire["condition"]),
            bundles=[Bundle.from_wire(b) for b in wire["bundles"]],
            rng_seed=int(wire["rng_seed"]),
            evaluator_ids=frozenset(wire.get("evaluator_ids", ())),
            qa_reviewer_ids=frozenset(wire.get("qa_reviewer_ids", ())),
        )


def _coerce_policy(p: Any) -> PolicyRef:
    if isinstance(p, PolicyRef):
        return p
    if isinstance(p, str):
        return PolicyRef(policy_id=p)
    if isinstance(p, Mapping):
        return PolicyRef(policy_id=p["policy_id"], display_name=p.get("display_name", ""))
    raise ProtocolError(f"cannot interpret policy spec: {p!r}")


def create_session(
    policies: Sequence[Any],
    tasks: Sequence[str],
    condition: ConditionTag | str,
    n_bundles: int,
    rng_seed: int,
    ics: Sequence[InitialCondition] | None = None,
    evaluator_ids: Iterable[str] = (),
    qa_reviewer_ids: Iterable[str] = (),
    session_id: str | None = None,
) -> Session:
    """Create a blind session: fresh codes, one IC and one random ordering
    per bundle.

    n_bundles bundles are laid out per task, in task order. ICs may be
    supplied (manual, real-world) and must then match the total bundle
    count; otherwise simulation-sampled ICs are generated with per-IC seeds.
    Everything, including generated ids, is deterministic in rng_seed.
    """
    refs = [_coerce_policy(p) for p in policies]
    ids = [r.policy_id for r in refs]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate policy ids: {sorted(ids)}")
    if len(refs) < 2:
        raise ProtocolError("need at least 2 policies")
    if n_bundles < 1:
        raise ProtocolError(f"n_bundles must be >= 1, got {n_bundles}")
    tasks = tuple(tasks)
    if not tasks:
        raise ProtocolError("need at least one task")
    if isinstance(condition, str):
        condition = ConditionTag(kind=condition)

    rng = np.random.default_rng(rng_seed)
    if session_id is None:
        session_id = f"sess-{rng_seed:x}-{rng.integers(0, 16**6):06x}"

    taken = set(ids)
    codes: list[str] = []
    while len(codes) < len(refs):
        code = f"code-{rng.integers(0, 16**8):08x}"
        if code not in taken:
            codes.append(code)
            taken.add(code)
    blinded = tuple(
        PolicyRef(policy_id=r.policy_id, display_name=r.display_name, blinding_code=c)
        for r, c in zip(refs, codes)
    )

    total = n_bundles * len(tasks)
    if ics is not None:
        ics = list(ics)
        if len(ics) != total:
            raise ProtocolError(f"need {total} ICs (one per bundle), got {len(ics)}")

    bundles: list[Bundle] = []
    index = 0
    for task in tasks:
        for _ in range(n_bundles):
            if ics is not None:
                ic = ics[index]
            else:
                ic_id = f"{session_id}-ic-{index:05d}"
                ic = InitialCondition(
                    ic_id=ic_id,
                    task_id=task,
                    overlay_asset=f"overlays/{task}/{ic_id}.png",
                    source="simulation_sampled",
                    seed=int(rng.integers(0, 2**31 - 1)),
                )
            perm = rng.permutation(len(blinded))
            bundles.append(
                Bundle(
                    bundle_id=f"{session_id}-b{index:05d}",
                    ic=ic,
                    ordering=tuple(codes[i] for i in perm),
                    slots=[Slot() for _ in blinded],
                )
            )
            index += 1

    return Session(
        session_id=session_id,
        policies=blinded,
        tasks=tasks,
        condition=condition,
        bundles=bundles,
        rng_seed=rng_seed,
        evaluator_ids=frozenset(evaluator_ids),
        qa_reviewer_ids=frozenset(qa_reviewer_ids),
    )


def next_assignment(session: Session) -> Assignment:
    """The next pending slot of the lowest-index incomplete bundle.

    Bundles never interleave: while the active bundle has running slots
    (e.g. an aborted slot may re-queue into it), the next bundle stays
    closed and BundleBusyError says to finish or wait. Completed bundles are
    skipped via a cursor that only advances, so draining a session costs
    O(1) amortized per call.
    """
    cursor = session._drain_cursor
    bundles = session.bundles
    while cursor < len(bundles) and bundles[cursor].complete:
        cursor += 1
    session._drain_cursor = cursor
    if cursor == len(bundles):
        raise SessionExhaustedError(f"session {session.session_id} has no pending slots")
    bundle = bundles[cursor]
    pending = bundle.next_pending()
    if pending is None:
        raise BundleBusyError(
            f"{bundle.bundle_id} has running slots and nothing pending; "
            "finish them before the next bundle opens"
        )
    return Assignment(
        bundle_id=bundle.bundle_id,
        slot=pending,
        blinding_code=bundle.ordering[pending],
        ic=bundle.ic,
    )


def record_slot(
    session: Session,
    bundle_id: str,
    slot: int,
    rollout_id: str,
    status: str,
    evaluator_id: str | None = None,
) -> Session:
    """Apply one slot transition: pending->running->done|aborted.

    A first abort re-queues the slot (retry); a second abort is terminal and
    the slot counts as missing. The rollout_id of a finish must match the
    one that started the slot, so stale submissions are rejected.
    """
    bundle = session.bundle(bundle_id)
    if not 0 <= slot < len(bundle.slots):
        raise ProtocolError(f"{bundle_id} has no slot {slot}")
    state = bundle.slots[slot]
    if status == SLOT_RUNNING:
        if state.status != SLOT_PENDING:
            raise IllegalTransitionError(
                f"{bundle_id}[{slot}]: cannot start from {state.status}"
            )
        if not rollout_id:
            raise ProtocolError("starting a slot requires a rollout_id")
        state.status = SLOT_RUNNING
        state.rollout_id = rollout_id
        state.evaluator_id = evaluator_id
    elif status == SLOT_DONE:
        if state.status != SLOT_RUNNING:
            raise IllegalTransitionError(
                f"{bundle_id}[{slot}]: cannot finish from {state.status}"
            )
        if rollout_id != state.rollout_id:
            raise IllegalTransitionError(
                f"{bundle_id}[{slot}]: stale rollout_id {rollout_id!r} "
                f"(running {state.rollout_id!r})"
            )
        state.status = SLOT_DONE
    elif status == SLOT_ABORTED:
        if state.status != SLOT_RUNNING:
            raise IllegalTransitionError(
                f"{bundle_id}[{slot}]: cannot abort from {state.status}"
            )
        if rollout_id != state.rollout_id:
            raise IllegalTransitionError(
                f"{bundle_id}[{slot}]: stale rollout_id {rollout_id!r} "
                f"(running {state.rollout_id!r})"
            )
        state.aborted_rollout_ids = state.aborted_rollout_ids + (rollout_id,)
        if state.retries == 0:
            state.status = SLOT_PENDING
            state.rollout_id = None
            state.evaluator_id = None
            state.retries = 1
        else:
            state.status = SLOT_ABORTED
            state.rollout_id = None
    else:
        raise ProtocolError(f"unknown slot status: {status!r}")
    return session


def unblind(session: Session, authorization: Authorization) -> dict[str, str]:
    """Reveal the blinding-code -> policy_id mapping.

    Allowed once the session is complete, or early for the analyst role.
    Every reveal lands in the session audit trail.
    """
    if authorization.role != "analyst" and not session.complete:
        raise UnauthorizedError(
            f"unauthorized: {authorization.actor_id} ({authorization.role}) "
            "cannot unblind an incomplete session"
        )
    mapping = session.code_to_policy()
    session.audit.append(
        {
            "event": EVENT_UNBLIND,
            "actor_id": authorization.actor_id,
            "role": authorization.role,
            "session_complete": session.complete,
        }
    )
    return mapping


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionLog:
    """Append-only JSONL event log; state is a pure fold of its events."""

    def __init__(self, path: str | Path, clock: Callable[[], str] = _utc_now) -> None:
        self.path = Path(path)
        self._clock = clock

    def append(self, event_type: str, payload: Mapping[str, Any]) -> dict[str, Any]:
        event = {
            "event_type": event_type,
            "timestamp": self._clock(),
            "payload": dict(payload),
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        return event

    def events(self) -> Iterator[dict[str, Any]]:
        if not self.path.exists():
            return
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)

    def record_session(self, session: Session) -> None:
        self.append(EVENT_SESSION_CREATED, session.to_wire())

    def record_slot_event(
        self,
        session: Session,
        bundle_id: str,
        slot: int,
        rollout_id: str,
        status: str,
        evaluator_id: str | None = None,
    ) -> Session:
        """Apply a transition and persist it as one event."""
        event_type = EVENT_SLOT_STARTED if status == SLOT_RUNNING else EVENT_SLOT_FINISHED
        session = record_slot(session, bundle_id, slot, rollout_id, status, evaluator_id)
        self.append(
            event_type,
            {
                "session_id": session.session_id,
                "bundle_id": bundle_id,
                "slot": slot,
                "rollout_id": rollout_id,
                "status": status,
                "evaluator_id": evaluator_id,
            },
        )
        return session

    def record_unblind(self, session: Session, authorization: Authorization) -> dict[str, str]:
        mapping = unblind(session, authorization)
        self.append(
            EVENT_UNBLIND,
            {
                "session_id": session.session_id,
                "actor_id": authorization.actor_id,
                "role": authorization.role,
            },
        )
        return mapping


def apply_session_event(sessions: dict[str, Session], event: Mapping[str, Any]) -> bool:
    """Fold one event into the session map. Returns False on foreign events
    so callers layering extra event types can dispatch them."""
    event_type = event["event_type"]
    payload = event["payload"]
    if event_type == EVENT_SESSION_CREATED:
        session = Session.from_wire(payload)
        sessions[session.session_id] = session
        return True
    if event_type in (EVENT_SLOT_STARTED, EVENT_SLOT_FINISHED):
        session = sessions[payload["session_id"]]
        record_slot(
            session,
            payload["bundle_id"],
            payload["slot"],
            payload["rollout_id"],
            payload["status"],
            payload.get("evaluator_id"),
        )
        return True
    if event_type == EVENT_UNBLIND:
        session = sessions.get(payload.get("session_id", ""))
        if session is not None:
            session.audit.append(dict(payload))
        return True
    return False


def replay_sessions(events: Iterable[Mapping[str, Any]]) -> dict[str, Session]:
    """Rebuild all session state from an event stream."""
    sessions: dict[str, Session] = {}
    for event in events:
        apply_session_event(sessions, event)
    return sessions
