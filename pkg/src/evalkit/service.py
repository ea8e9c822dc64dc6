"""HTTP service for blind evaluation sessions, rubric entry, and QA review.

The service is a thin, role-aware shell over the protocol module: every
state change is one event appended to the protocol's JSONL log, and the
in-memory state is exactly the fold of that log (restart-safe by replay).
Evaluator-facing responses never carry a policy_id — evaluators see
blinding codes only; unblinding is not exposed over the wire at all.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import JSONResponse

from . import __version__
from .protocol import (
    Authorization,
    BundleBusyError,
    ProtocolError,
    Session,
    SessionExhaustedError,
    SessionLog,
    apply_session_event,
    create_session,
    next_assignment,
)
from .rollout import RolloutRecord, RolloutStore
from .scoring import (
    LengthMismatchError,
    QAReview,
    RubricSpec,
    load_rubric_specs,
    qa_discrepancy,
    score_rubric,
)

ROLES = ("evaluator", "qa_reviewer", "analyst")

EVENT_ROLLOUT_RECORDED = "rollout_recorded"
EVENT_RUBRIC_SUBMITTED = "rubric_submitted"
EVENT_QA_SUBMITTED = "qa_submitted"


class ServiceError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    """Static service configuration: token->role map plus file locations."""

    tokens: Mapping[str, Authorization]
    log_path: Path
    rubrics: Path | None = None
    reports_dir: Path | None = None
    station: str = "station-unspecified"
    qa_seed: int = 0

    def __post_init__(self) -> None:
        for token, auth in self.tokens.items():
            if auth.role not in ROLES:
                raise ServiceError(f"token {token!r} has unknown role {auth.role!r}")

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent

        def _resolve(name: str) -> Path | None:
            value = doc.get(name)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        log_path = _resolve("log_path")
        if log_path is None:
            raise ServiceError("config needs log_path")
        return cls(
            tokens={
                token: Authorization(actor_id=spec["actor_id"], role=spec["role"])
                for token, spec in doc.get("tokens", {}).items()
            },
            log_path=log_path,
            rubrics=_resolve("rubrics"),
            reports_dir=_resolve("reports_dir"),
            station=doc.get("station", "station-unspecified"),
            qa_seed=int(doc.get("qa_seed", 0)),
        )


def sample_qa_queue(store: RolloutStore, fraction: float, seed: int) -> list[dict[str, Any]]:
    """Uniform sample without replacement of ceil(fraction * N) rollouts.

    Deterministic per seed; items carry the rubric shape but never the
    original answers (blank-form-first review).
    """
    if not 0.0 < fraction <= 1.0:
        raise ServiceError(f"fraction must be in (0, 1], got {fraction}")
    ids = sorted(r.rollout_id for r in store.records)
    if not ids:
        raise ServiceError("cannot sample a QA queue from an empty store")
    count = math.ceil(fraction * len(ids))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ids), size=count, replace=False)
    return [
        {
            "rollout_id": ids[i],
            "task": store.get(ids[i]).task,
            "question_count": len(store.get(ids[i]).rubric_answers),
        }
        for i in sorted(chosen)
    ]


class EvalService:
    """All service state plus the single-writer event log."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.specs: dict[str, RubricSpec] = (
            dict(load_rubric_specs(config.rubrics)) if config.rubrics else {}
        )
        self.log = SessionLog(config.log_path)
        self.sessions: dict[str, Session] = {}
        self.records: dict[str, RolloutRecord] = {}
        self.record_session_ids: dict[str, str] = {}
        self.reviews: dict[str, QAReview] = {}
        self.lock = threading.Lock()
        for event in self.log.events():
            self.apply_event(event)

    # -- event fold ---------------------------------------------------------

    def apply_event(self, event: Mapping[str, Any]) -> None:
        if apply_session_event(self.sessions, event):
            return
        payload = event["payload"]
        event_type = event["event_type"]
        if event_type == EVENT_ROLLOUT_RECORDED:
            record = RolloutRecord.from_wire(payload["record"])
            self.records[record.rollout_id] = record
            self.record_session_ids[record.rollout_id] = payload["session_id"]
        elif event_type == EVENT_RUBRIC_SUBMITTED:
            record = self.records[payload["rollout_id"]]
            self.records[record.rollout_id] = replace(
                record, rubric_answers=tuple(bool(a) for a in payload["answers"])
            )
        elif event_type == EVENT_QA_SUBMITTED:
            review = QAReview(
                rollout_id=payload["rollout_id"],
                reviewer_id=payload["reviewer_id"],
                reviewed_success=bool(payload["success"]),
                reviewed_answers=tuple(bool(a) for a in payload["answers"]),
            )
            self.reviews[review.rollout_id] = review
        else:
            raise ServiceError(f"unknown event type in log: {event_type!r}")

    # -- views --------------------------------------------------------------

    def store(self) -> RolloutStore:
        return RolloutStore(
            self.records[rid] for rid in sorted(self.records)
        )

    def session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")

    def session_view(self, session: Session) -> dict[str, Any]:
        current: dict[str, Any] | None = None
        status = "active"
        try:
            current = next_assignment(session).to_wire()
        except SessionExhaustedError:
            status = "complete"
        except BundleBusyError:
            status = "bundle_busy"
        return {
            "session_id": session.session_id,
            "progress": {"done": session.done_slots, "total": session.total_slots},
            "current": current,
            "overlay_asset": current["ic"]["overlay_asset"] if current else None,
            "status": status,
        }

    def spec_for(self, task: str) -> RubricSpec | None:
        return self.specs.get(task)

    def questions_for(self, task: str) -> list[str]:
        spec = self.spec_for(task)
        return list(spec.questions) if spec else []

    def dashboard(self) -> dict[str, Any]:
        reviews = [self.reviews[rid] for rid in sorted(self.reviews)]
        if not reviews:
            return {"reviewed": 0, "success_discrepancy": None, "question_discrepancy": None}
        report = qa_discrepancy(self.store(), reviews)
        return {
            "reviewed": report.reviewed,
            "success_discrepancy": report.success_discrepancy,
            "question_discrepancy": (
                report.question_discrepancy if report.question_pairs else None
            ),
        }


def create_app(config: ServiceConfig | str | Path) -> FastAPI:
    if not isinstance(config, ServiceConfig):
        config = ServiceConfig.load(config)
    service = EvalService(config)
    app = FastAPI(title="evalkit service", version=__version__)
    app.state.service = service

    def authorize(authorization: str | None = Header(default=None)) -> Authorization:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        auth = service.config.tokens.get(token)
        if auth is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return auth

    def require(auth: Authorization, *roles: str) -> None:
        if auth.role not in roles:
            raise HTTPException(
                status_code=403,
                detail=f"role {auth.role} may not call this endpoint",
            )

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok", "version": __version__}

    @app.post("/sessions", status_code=201)
    def post_session(
        body: dict[str, Any], auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        require(auth, "analyst")
        try:
            with service.lock:
                session = create_session(
                    policies=body["policies"],
                    tasks=body["tasks"],
                    condition=body.get("condition", "nominal"),
                    n_bundles=int(body["n_bundles"]),
                    rng_seed=int(body.get("rng_seed", 0)),
                    evaluator_ids=body.get("evaluator_ids", ()),
                    qa_reviewer_ids=body.get("qa_reviewer_ids", ()),
                )
                if session.session_id in service.sessions:
                    raise HTTPException(status_code=409, detail="session already exists")
                service.log.record_session(session)
                service.sessions[session.session_id] = session
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"missing field: {exc}")
        except ProtocolError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "session_id": session.session_id,
            "bundles": len(session.bundles),
            "total_slots": session.total_slots,
        }

    @app.get("/sessions/{session_id}")
    def get_session(
        session_id: str, auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        with service.lock:
            return service.session_view(service.session(session_id))

    @app.get("/sessions/{session_id}/next")
    def get_next(
        session_id: str, auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        with service.lock:
            session = service.session(session_id)
            try:
                assignment = next_assignment(session)
            except SessionExhaustedError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except BundleBusyError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            wire = assignment.to_wire()
            wire["questions"] = service.questions_for(assignment.ic.task_id)
            return wire

    @app.post("/rollouts", status_code=201)
    def post_rollout(
        body: dict[str, Any], auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        require(auth, "evaluator", "analyst")
        for name in ("session_id", "bundle_id", "blinding_code", "rollout_id"):
            if name not in body:
                raise HTTPException(status_code=422, detail=f"missing field: {name}")
        with service.lock:
            session = service.session(body["session_id"])
            try:
                assignment = next_assignment(session)
            except (SessionExhaustedError, BundleBusyError) as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            if (
                assignment.bundle_id != body["bundle_id"]
                or assignment.blinding_code != body["blinding_code"]
            ):
                raise HTTPException(
                    status_code=409,
                    detail=(
                        "stale slot: current assignment is "
                        f"{assignment.bundle_id}/{assignment.blinding_code}"
                    ),
                )
            if body["rollout_id"] in service.records:
                raise HTTPException(
                    status_code=409, detail=f"duplicate rollout_id: {body['rollout_id']}"
                )
            aborted = bool(body.get("aborted", False))
            if not aborted:
                for name in ("success", "terminal_reason", "started_at", "ended_at"):
                    if name not in body:
                        raise HTTPException(status_code=422, detail=f"missing field: {name}")
                wire = {
                    "rollout_id": body["rollout_id"],
                    "task": assignment.ic.task_id,
                    "policy": assignment.blinding_code,
                    "condition": session.condition.to_wire(),
                    "station": body.get("station", service.config.station),
                    "started_at": body["started_at"],
                    "ended_at": body["ended_at"],
                    "success": body["success"],
                    "terminal_reason": body["terminal_reason"],
                    "bundle_id": assignment.bundle_id,
                    "evaluator_id": auth.actor_id,
                }
                try:
                    record = RolloutRecord.from_wire(wire)
                except ValueError as exc:
                    raise HTTPException(status_code=422, detail=str(exc))
            service.log.record_slot_event(
                session,
                assignment.bundle_id,
                assignment.slot,
                body["rollout_id"],
                "running",
                evaluator_id=auth.actor_id,
            )
            service.log.record_slot_event(
                session,
                assignment.bundle_id,
                assignment.slot,
                body["rollout_id"],
                "aborted" if aborted else "done",
                evaluator_id=auth.actor_id,
            )
            if aborted:
                slot_status = "aborted"
            else:
                service.log.append(
                    EVENT_ROLLOUT_RECORDED,
                    {"session_id": session.session_id, "record": record.to_wire()},
                )
                service.records[record.rollout_id] = record
                service.record_session_ids[record.rollout_id] = session.session_id
                slot_status = "done"
            return {
                "rollout_id": body["rollout_id"],
                "slot_status": slot_status,
                "progress": {"done": session.done_slots, "total": session.total_slots},
            }

    @app.post("/rollouts/{rollout_id}/rubric")
    def post_rubric(
        rollout_id: str, body: dict[str, Any], auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        require(auth, "evaluator", "analyst")
        answers = body.get("answers")
        if not isinstance(answers, list) or not all(isinstance(a, bool) for a in answers):
            raise HTTPException(status_code=422, detail="answers must be a list of booleans")
        with service.lock:
            record = service.records.get(rollout_id)
            if record is None:
                raise HTTPException(status_code=404, detail=f"unknown rollout: {rollout_id}")
            if record.evaluator_id != auth.actor_id:
                raise HTTPException(
                    status_code=403,
                    detail="only the evaluator who ran the rollout may submit its rubric",
                )
            spec = service.spec_for(record.task)
            tc = None
            if spec is not None:
                try:
                    tc = score_rubric(answers, spec).value
                except LengthMismatchError as exc:
                    raise HTTPException(status_code=422, detail=str(exc))
            service.log.append(
                EVENT_RUBRIC_SUBMITTED,
                {"rollout_id": rollout_id, "answers": answers, "actor_id": auth.actor_id},
            )
            service.records[rollout_id] = replace(
                record, rubric_answers=tuple(answers)
            )
            return {"rollout_id": rollout_id, "answers_recorded": len(answers), "tc": tc}

    @app.get("/qa/queue")
    def get_qa_queue(
        fraction: float = Query(default=1.0),
        seed: int | None = Query(default=None),
        auth: Authorization = Depends(authorize),
    ) -> dict[str, Any]:
        require(auth, "qa_reviewer", "analyst")
        with service.lock:
            try:
                items = sample_qa_queue(
                    service.store(),
                    fraction,
                    service.config.qa_seed if seed is None else seed,
                )
            except ServiceError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            for item in items:
                item["questions"] = service.questions_for(item["task"])
                item["reviewed"] = item["rollout_id"] in service.reviews
            return {"items": items, "dashboard": service.dashboard()}

    @app.post("/qa/{rollout_id}")
    def post_qa(
        rollout_id: str, body: dict[str, Any], auth: Authorization = Depends(authorize)
    ) -> dict[str, Any]:
        require(auth, "qa_reviewer", "analyst")
        answers = body.get("answers", [])
        if "success" not in body or not isinstance(body["success"], bool):
            raise HTTPException(status_code=422, detail="success must be a boolean")
        if not isinstance(answers, list) or not all(isinstance(a, bool) for a in answers):
            raise HTTPException(status_code=422, detail="answers must be a list of booleans")
        with service.lock:
            record = service.records.get(rollout_id)
            if record is None:
                raise HTTPException(status_code=404, detail=f"unknown rollout: {rollout_id}")
            if record.evaluator_id == auth.actor_id:
                raise HTTPException(
                    status_code=403, detail="reviewers may not review their own rollouts"
                )
            if rollout_id in service.reviews:
                raise HTTPException(
                    status_code=409, detail=f"rollout already reviewed: {rollout_id}"
                )
            if len(answers) != len(record.rubric_answers):
                raise HTTPException(
                    status_code=422,
                    detail=(
                        f"rubric length mismatch: got {len(answers)}, expected "
                        f"{len(record.rubric_answers)} for {record.task}"
                    ),
                )
            review = QAReview(
                rollout_id=rollout_id,
                reviewer_id=auth.actor_id,
                reviewed_success=body["success"],
                reviewed_answers=tuple(answers),
            )
            service.log.append(
                EVENT_QA_SUBMITTED,
                {
                    "rollout_id": rollout_id,
                    "reviewer_id": auth.actor_id,
                    "success": body["success"],
                    "answers": answers,
                },
            )
            service.reviews[rollout_id] = review
            mismatches = sum(
                1 for a, b in zip(answers, record.rubric_answers) if a != b
            )
            return {
                "rollout_id": rollout_id,
                "original_success": record.success,
                "original_answers": list(record.rubric_answers),
                "success_mismatch": body["success"] != record.success,
                "question_mismatches": mismatches,
                "dashboard": service.dashboard(),
            }

    @app.get("/reports/{task}/{condition}")
    def get_report(
        task: str, condition: str, auth: Authorization = Depends(authorize)
    ) -> JSONResponse:
        require(auth, "qa_reviewer", "analyst")  # report bodies name policies
        reports_dir = service.config.reports_dir
        if reports_dir is None:
            raise HTTPException(status_code=404, detail="no reports directory configured")
        cell_dir = reports_dir / task / condition
        if not cell_dir.is_dir():
            raise HTTPException(
                status_code=404, detail=f"no report for {task}/{condition}"
            )
        doc: dict[str, Any] = {}
        for name in ("sr_posterior", "tc_raw", "comparisons"):
            path = cell_dir / f"{name}.json"
            if path.exists():
                doc[name] = json.loads(path.read_text(encoding="utf-8"))
        cld = cell_dir / "cld.csv"
        if cld.exists():
            doc["cld_csv"] = cld.read_text(encoding="utf-8")
        return JSONResponse(doc)

    return app
