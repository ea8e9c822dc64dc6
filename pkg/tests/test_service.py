"""HTTP service: auth, blind assignment walk, rubric/QA flows, replay."""

from __future__ import annotations

import json
import math
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from evalkit.protocol import Authorization
from evalkit.rollout import RolloutStore
from evalkit.scoring import score_rubric
from evalkit.service import EvalService, ServiceConfig, ServiceError, create_app, sample_qa_queue

from conftest import make_record

TASK = "stack-dishes"
QUESTIONS = 4  # 3 milestones + 1 failure question

ANALYST = {"Authorization": "Bearer tok-ana"}
EVALUATOR = {"Authorization": "Bearer tok-eva"}
EVALUATOR_2 = {"Authorization": "Bearer tok-eva2"}
REVIEWER = {"Authorization": "Bearer tok-qa"}
SELF_REVIEWER = {"Authorization": "Bearer tok-qa-self"}  # qa role, evaluator's actor id


def write_service_config(root: Path) -> Path:
    (root / "rubrics.json").write_text(
        json.dumps(
            {
                "rubrics": [
                    {
                        "task_id": TASK,
                        "milestones": [f"milestone {i}" for i in range(3)],
                        "failure_questions": ["object dropped"],
                    }
                ]
            }
        ),
        encoding="utf-8",
    )
    config = {
        "log_path": "events.jsonl",
        "rubrics": "rubrics.json",
        "reports_dir": "reports",
        "station": "station-07",
        "qa_seed": 5,
        "tokens": {
            "tok-ana": {"actor_id": "ana-01", "role": "analyst"},
            "tok-eva": {"actor_id": "eva-01", "role": "evaluator"},
            "tok-eva2": {"actor_id": "eva-02", "role": "evaluator"},
            "tok-qa": {"actor_id": "qa-01", "role": "qa_reviewer"},
            "tok-qa-self": {"actor_id": "eva-01", "role": "qa_reviewer"},
        },
    }
    path = root / "service.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def config_path(tmp_path):
    return write_service_config(tmp_path)


@pytest.fixture
def client(config_path):
    return TestClient(create_app(config_path))


def create_demo_session(client, n_bundles=2, seed=7):
    response = client.post(
        "/sessions",
        headers=ANALYST,
        json={
            "policies": ["flow-matching", "behavior-cloning"],
            "tasks": [TASK],
            "n_bundles": n_bundles,
            "rng_seed": seed,
        },
    )
    assert response.status_code == 201, response.text
    return response.json()


def submit_next_rollout(client, session_id, counter, success=True, headers=EVALUATOR,
                        aborted=False, **overrides):
    assignment = client.get(f"/sessions/{session_id}/next", headers=headers).json()
    body = {
        "session_id": session_id,
        "bundle_id": assignment["bundle_id"],
        "blinding_code": assignment["blinding_code"],
        "rollout_id": f"ro-{counter:04d}",
        "success": success,
        "terminal_reason": "success" if success else "timeout",
        "started_at": "2026-07-01T08:00:00+00:00",
        "ended_at": "2026-07-01T08:04:00+00:00",
    }
    if aborted:
        body = {k: body[k] for k in ("session_id", "bundle_id", "blinding_code", "rollout_id")}
        body["aborted"] = True
    body.update(overrides)
    return client.post("/rollouts", headers=headers, json=body)


# -- configuration and auth --------------------------------------------------------


def test_config_load_resolves_paths_and_roles(config_path):
    config = ServiceConfig.load(config_path)
    assert config.log_path == config_path.parent / "events.jsonl"
    assert config.rubrics == config_path.parent / "rubrics.json"
    assert config.station == "station-07"
    assert config.tokens["tok-ana"].role == "analyst"


def test_config_rejects_unknown_roles_and_missing_log(tmp_path):
    with pytest.raises(ServiceError):
        ServiceConfig(
            tokens={"t": Authorization(actor_id="x", role="root")},
            log_path=tmp_path / "events.jsonl",
        )
    path = tmp_path / "service.json"
    path.write_text(json.dumps({"tokens": {}}))
    with pytest.raises(ServiceError, match="log_path"):
        ServiceConfig.load(path)


def test_healthz_needs_no_token(client):
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_missing_or_unknown_tokens_are_401(client):
    assert client.get("/qa/queue").status_code == 401
    assert (
        client.get("/qa/queue", headers={"Authorization": "Bearer nope"}).status_code == 401
    )


def test_session_creation_is_analyst_only(client):
    response = client.post(
        "/sessions", headers=EVALUATOR,
        json={"policies": ["a", "b"], "tasks": [TASK], "n_bundles": 1},
    )
    assert response.status_code == 403


def test_session_creation_validates_payloads(client):
    response = client.post("/sessions", headers=ANALYST, json={"tasks": [TASK]})
    assert response.status_code == 422
    response = client.post(
        "/sessions", headers=ANALYST,
        json={"policies": ["a"], "tasks": [TASK], "n_bundles": 1},
    )
    assert response.status_code == 422  # fewer than 2 policies
    created = create_demo_session(client)
    response = client.post(
        "/sessions", headers=ANALYST,
        json={"policies": ["a", "b"], "tasks": [TASK], "n_bundles": 1, "rng_seed": 7},
    )
    assert response.status_code == 409  # same seed, same session id
    assert created["session_id"]


# -- the blind walk ---------------------------------------------------------------


def test_assignments_stay_blind_over_the_wire(client):
    session = create_demo_session(client, n_bundles=3)
    session_id = session["session_id"]
    counter = 0
    while True:
        view = client.get(f"/sessions/{session_id}", headers=EVALUATOR)
        assert "policy_id" not in view.text
        assert "flow-matching" not in view.text
        if view.json()["status"] == "complete":
            break
        nxt = client.get(f"/sessions/{session_id}/next", headers=EVALUATOR)
        assert nxt.status_code == 200
        assert "policy_id" not in nxt.text
        assert nxt.json()["questions"] == [
            "milestone 0", "milestone 1", "milestone 2", "object dropped",
        ]
        response = submit_next_rollout(client, session_id, counter)
        assert response.status_code == 201, response.text
        counter += 1
    assert counter == session["total_slots"]
    assert client.get(f"/sessions/{session_id}/next", headers=EVALUATOR).status_code == 404
    late = client.post(
        "/rollouts", headers=EVALUATOR,
        json={
            "session_id": session_id,
            "bundle_id": "b-stale",
            "blinding_code": "code-stale",
            "rollout_id": "ro-9999",
        },
    )
    assert late.status_code == 409


def test_progress_counts_completed_slots(client):
    session = create_demo_session(client)
    session_id = session["session_id"]
    response = submit_next_rollout(client, session_id, 0)
    assert response.json()["progress"] == {"done": 1, "total": session["total_slots"]}
    view = client.get(f"/sessions/{session_id}", headers=EVALUATOR).json()
    assert view["progress"]["done"] == 1
    assert view["overlay_asset"] == view["current"]["ic"]["overlay_asset"]


def test_stale_and_duplicate_submissions_are_409(client):
    session_id = create_demo_session(client)["session_id"]
    response = submit_next_rollout(client, session_id, 0, bundle_id="wrong-bundle")
    assert response.status_code == 409
    assert "stale slot" in response.json()["detail"]

    assert submit_next_rollout(client, session_id, 1).status_code == 201
    response = submit_next_rollout(client, session_id, 1)  # rollout_id reuse
    assert response.status_code == 409
    assert "duplicate rollout_id" in response.json()["detail"]


def test_incomplete_rollout_bodies_are_422(client):
    session_id = create_demo_session(client)["session_id"]
    response = client.post("/rollouts", headers=EVALUATOR, json={"session_id": session_id})
    assert response.status_code == 422
    assignment = client.get(f"/sessions/{session_id}/next", headers=EVALUATOR).json()
    response = client.post(
        "/rollouts", headers=EVALUATOR,
        json={
            "session_id": session_id,
            "bundle_id": assignment["bundle_id"],
            "blinding_code": assignment["blinding_code"],
            "rollout_id": "ro-0000",
            "success": True,
            "terminal_reason": "success",
            "started_at": "2026-07-01T09:00:00+00:00",
            "ended_at": "2026-07-01T08:00:00+00:00",  # ends before it starts
        },
    )
    assert response.status_code == 422


def test_aborted_rollouts_requeue_the_slot(client):
    session_id = create_demo_session(client)["session_id"]
    first = client.get(f"/sessions/{session_id}/next", headers=EVALUATOR).json()
    response = submit_next_rollout(client, session_id, 0, aborted=True)
    assert response.status_code == 201
    assert response.json()["slot_status"] == "aborted"
    retry = client.get(f"/sessions/{session_id}/next", headers=EVALUATOR).json()
    assert (retry["bundle_id"], retry["slot"]) == (first["bundle_id"], first["slot"])
    assert retry["blinding_code"] == first["blinding_code"]
    # the aborted attempt left no rollout record behind
    rubric = client.post(
        "/rollouts/ro-0000/rubric", headers=EVALUATOR, json={"answers": [True] * QUESTIONS}
    )
    assert rubric.status_code == 404


# -- rubric entry ------------------------------------------------------------------


def test_rubric_round_trip_scores_tc(client):
    session_id = create_demo_session(client)["session_id"]
    submit_next_rollout(client, session_id, 0)
    answers = [True, True, False, False]
    response = client.post(
        "/rollouts/ro-0000/rubric", headers=EVALUATOR, json={"answers": answers}
    )
    assert response.status_code == 200
    assert response.json() == {
        "rollout_id": "ro-0000",
        "answers_recorded": QUESTIONS,
        "tc": pytest.approx(2 / 3),
    }


def test_rubric_validation_and_ownership(client):
    session_id = create_demo_session(client)["session_id"]
    submit_next_rollout(client, session_id, 0)
    bad_type = client.post(
        "/rollouts/ro-0000/rubric", headers=EVALUATOR, json={"answers": [1, 0, 1, 0]}
    )
    assert bad_type.status_code == 422
    bad_length = client.post(
        "/rollouts/ro-0000/rubric", headers=EVALUATOR, json={"answers": [True] * 7}
    )
    assert bad_length.status_code == 422
    assert "rubric length mismatch" in bad_length.json()["detail"]
    foreign = client.post(
        "/rollouts/ro-0000/rubric", headers=EVALUATOR_2, json={"answers": [True] * 4}
    )
    assert foreign.status_code == 403
    missing = client.post(
        "/rollouts/ro-9999/rubric", headers=EVALUATOR, json={"answers": [True] * 4}
    )
    assert missing.status_code == 404


# -- QA review ---------------------------------------------------------------------


def finished_session(client, n_bundles=2):
    session = create_demo_session(client, n_bundles=n_bundles)
    session_id = session["session_id"]
    rollout_ids = []
    for counter in range(session["total_slots"]):
        submit_next_rollout(client, session_id, counter, success=counter % 2 == 0)
        rollout_id = f"ro-{counter:04d}"
        client.post(
            f"/rollouts/{rollout_id}/rubric",
            headers=EVALUATOR,
            json={"answers": [counter % 2 == 0] * QUESTIONS},
        )
        rollout_ids.append(rollout_id)
    return session_id, rollout_ids


def test_qa_queue_is_sampled_without_originals(client):
    _, rollout_ids = finished_session(client)
    response = client.get("/qa/queue", headers=REVIEWER)
    assert response.status_code == 200
    doc = response.json()
    assert [item["rollout_id"] for item in doc["items"]] == sorted(rollout_ids)
    for item in doc["items"]:
        assert item["question_count"] == QUESTIONS
        assert item["reviewed"] is False
        assert "answers" not in item  # blank-form-first: no originals in the queue
        assert "success" not in item
    assert doc["dashboard"] == {
        "reviewed": 0, "success_discrepancy": None, "question_discrepancy": None,
    }


def test_qa_queue_fraction_and_roles(client):
    _, rollout_ids = finished_session(client)
    n = len(rollout_ids)
    response = client.get("/qa/queue?fraction=0.3&seed=1", headers=REVIEWER)
    assert len(response.json()["items"]) == math.ceil(0.3 * n)
    again = client.get("/qa/queue?fraction=0.3&seed=1", headers=REVIEWER)
    assert again.json()["items"] == response.json()["items"]
    assert client.get("/qa/queue?fraction=0", headers=REVIEWER).status_code == 400
    assert client.get("/qa/queue", headers=EVALUATOR).status_code == 403


def test_qa_review_reveals_originals_only_after_submission(client):
    _, rollout_ids = finished_session(client)
    target = rollout_ids[0]  # recorded success=True, answers all True
    response = client.post(
        f"/qa/{target}", headers=REVIEWER,
        json={"success": False, "answers": [True, True, True, False]},
    )
    assert response.status_code == 200
    doc = response.json()
    assert doc["original_success"] is True
    assert doc["original_answers"] == [True] * QUESTIONS
    assert doc["success_mismatch"] is True
    assert doc["question_mismatches"] == 1
    assert doc["dashboard"]["reviewed"] == 1
    assert doc["dashboard"]["success_discrepancy"] == 1.0
    assert doc["dashboard"]["question_discrepancy"] == pytest.approx(1 / QUESTIONS)
    queue = client.get("/qa/queue", headers=REVIEWER).json()
    flags = {item["rollout_id"]: item["reviewed"] for item in queue["items"]}
    assert flags[target] is True


def test_qa_guardrails(client):
    _, rollout_ids = finished_session(client)
    target = rollout_ids[0]
    ok = {"success": True, "answers": [True] * QUESTIONS}
    assert client.post(f"/qa/{target}", headers=EVALUATOR, json=ok).status_code == 403
    assert (
        client.post(f"/qa/{target}", headers=SELF_REVIEWER, json=ok).status_code == 403
    )  # reviewer shares the evaluator's actor id
    assert client.post("/qa/ro-9999", headers=REVIEWER, json=ok).status_code == 404
    missing_success = client.post(f"/qa/{target}", headers=REVIEWER, json={"answers": []})
    assert missing_success.status_code == 422
    short = client.post(
        f"/qa/{target}", headers=REVIEWER, json={"success": True, "answers": [True]}
    )
    assert short.status_code == 422
    assert client.post(f"/qa/{target}", headers=REVIEWER, json=ok).status_code == 200
    assert client.post(f"/qa/{target}", headers=REVIEWER, json=ok).status_code == 409


# -- persistence -------------------------------------------------------------------


def test_restart_replays_identical_state(config_path):
    client = TestClient(create_app(config_path))
    session_id, rollout_ids = finished_session(client)
    client.post(
        f"/qa/{rollout_ids[1]}", headers=REVIEWER,
        json={"success": True, "answers": [False] * QUESTIONS},
    )
    before_view = client.get(f"/sessions/{session_id}", headers=ANALYST).json()
    before_queue = client.get("/qa/queue", headers=REVIEWER).json()

    replayed = EvalService(ServiceConfig.load(config_path))
    original = client.app.state.service
    assert replayed.sessions[session_id].to_wire() == original.sessions[session_id].to_wire()
    assert replayed.records == original.records
    assert replayed.reviews == original.reviews

    restarted = TestClient(create_app(config_path))
    assert client.app.state.service is not restarted.app.state.service
    assert restarted.get(f"/sessions/{session_id}", headers=ANALYST).json() == before_view
    assert restarted.get("/qa/queue", headers=REVIEWER).json() == before_queue


# -- reports gateway ---------------------------------------------------------------


def test_reports_endpoint_serves_rendered_cells(config_path, client):
    cell_dir = config_path.parent / "reports" / TASK / "nominal"
    cell_dir.mkdir(parents=True)
    (cell_dir / "sr_posterior.json").write_text(json.dumps({"policies": {"a": {}}}))
    (cell_dir / "cld.csv").write_text("policy,letters\na,a\n")

    assert client.get(f"/reports/{TASK}/nominal", headers=EVALUATOR).status_code == 403
    assert client.get("/reports/other-task/nominal", headers=REVIEWER).status_code == 404
    response = client.get(f"/reports/{TASK}/nominal", headers=REVIEWER)
    assert response.status_code == 200
    doc = response.json()
    assert doc["sr_posterior"] == {"policies": {"a": {}}}
    assert doc["cld_csv"].startswith("policy,letters")


def test_reports_endpoint_without_configured_dir(tmp_path):
    config = ServiceConfig(
        tokens={"t": Authorization(actor_id="qa", role="qa_reviewer")},
        log_path=tmp_path / "events.jsonl",
    )
    client = TestClient(create_app(config))
    response = client.get("/reports/a/b", headers={"Authorization": "Bearer t"})
    assert response.status_code == 404


# -- queue sampling unit ------------------------------------------------------------


def queue_store(n=10):
    return RolloutStore(
        [make_record(rollout_id=f"ro-{i:04d}", rubric_answers=(True,) * 4) for i in range(n)]
    )


def test_sample_qa_queue_takes_the_ceiling(record):
    store = queue_store(10)
    assert len(sample_qa_queue(store, 0.27, seed=0)) == 3  # ceil(2.7)
    assert len(sample_qa_queue(store, 1.0, seed=0)) == 10
    assert len(sample_qa_queue(store, 0.01, seed=0)) == 1


def test_sample_qa_queue_is_deterministic_and_distinct():
    store = queue_store(40)
    first = sample_qa_queue(store, 0.5, seed=9)
    second = sample_qa_queue(store, 0.5, seed=9)
    other = sample_qa_queue(store, 0.5, seed=10)
    assert first == second
    assert first != other
    ids = [item["rollout_id"] for item in first]
    assert len(set(ids)) == len(ids)
    assert ids == sorted(ids)


def test_sample_qa_queue_validates_inputs():
    with pytest.raises(ServiceError):
        sample_qa_queue(queue_store(5), 0.0, seed=0)
    with pytest.raises(ServiceError):
        sample_qa_queue(queue_store(5), 1.2, seed=0)
    with pytest.raises(ServiceError):
        sample_qa_queue(RolloutStore([]), 0.5, seed=0)


def test_queue_items_echo_rubric_shape():
    store = queue_store(4)
    items = sample_qa_queue(store, 1.0, seed=0)
    assert all(item["task"] == TASK for item in items)
    assert all(item["question_count"] == 4 for item in items)
    spec_score = score_rubric([True] * 4, load_spec())
    assert spec_score.value == 1.0


def load_spec():
    from evalkit.scoring import RubricSpec

    return RubricSpec(
        task_id=TASK,
        milestones=("m0", "m1", "m2"),
        failure_questions=("object dropped",),
    )
