#!/usr/bin/env python3
"""Generate a synthetic blind-trial campaign for demos and end-to-end tests.

Builds, under a target directory:
  rubrics.json          rubric specs (6 milestones + 2 failure questions/task)
  logs/<task>.jsonl     blinded rollout logs (policy column holds codes)
  campaign.json         report config with the code->policy mapping
  sessions.jsonl        protocol event log of every generated session

Outcomes are drawn from per-(policy, task) ground-truth success rates with
bundle-level difficulty coupling, so the sequential comparisons have real
signal. Everything is deterministic in --seed.
"""

from __future__ import annotations

import argparse
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from evalkit.protocol import SessionLog, create_session, next_assignment
from evalkit.rollout import RolloutRecord, write_rollout_log, RolloutStore

POLICIES = ("flow-matching", "behavior-cloning", "scripted-baseline")

# ground-truth success rate per (policy, task index)
TRUE_P = {
    "flow-matching": (0.82, 0.74, 0.66),
    "behavior-cloning": (0.55, 0.48, 0.40),
    "scripted-baseline": (0.30, 0.22, 0.35),
}

TASKS = ("stack-dishes", "fold-towel", "relocate-object")
MILESTONES = 6
FAILURE_QUESTIONS = 2
EVALUATORS = ("eva-01", "eva-02")

# bundle difficulty weight: how much of the success latent is shared across
# the policies of one bundle (same IC, similar failure modes)
COUPLING = 0.5


def rubric_doc() -> dict:
    rubrics = []
    for task in TASKS:
        rubrics.append(
            {
                "task_id": task,
                "milestones": [
                    f"{task}: milestone {i + 1} reached" for i in range(MILESTONES)
                ],
                "failure_questions": [
                    f"{task}: object dropped",
                    f"{task}: unsafe contact",
                ][:FAILURE_QUESTIONS],
            }
        )
    return {"rubrics": rubrics}


def _timestamps(index: int) -> tuple[str, str]:
    base = datetime(2026, 7, 1, 8, 0, tzinfo=timezone.utc) + timedelta(minutes=3 * index)
    return base.isoformat(), (base + timedelta(minutes=2, seconds=30)).isoformat()


def build_campaign(
    root: Path, seed: int = 20260701, n_bundles: int = 50, tasks=TASKS
) -> Path:
    root = Path(root)
    (root / "logs").mkdir(parents=True, exist_ok=True)
    (root / "rubrics.json").write_text(
        json.dumps(rubric_doc(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    session_log = SessionLog(root / "sessions.jsonl", clock=lambda: "2026-07-01T08:00:00+00:00")
    code_maps: dict[str, str] = {}
    counter = 0
    for t_index, task in enumerate(tasks):
        session = create_session(
            policies=POLICIES,
            tasks=[task],
            condition="nominal",
            n_bundles=n_bundles,
            rng_seed=seed + t_index,
        )
        session_log.record_session(session)
        code_to_policy = session.code_to_policy()
        code_maps.update(code_to_policy)
        rng = np.random.default_rng([seed, t_index])
        records = []
        for bundle in session.bundles:
            shared = rng.random()
            for _ in range(session.k):
                assignment = next_assignment(session)
                policy_id = code_to_policy[assignment.blinding_code]
                p = TRUE_P[policy_id][t_index % len(TRUE_P[policy_id])]
                # share the difficulty latent with probability COUPLING;
                # marginals stay exactly Bernoulli(p)
                latent = shared if rng.random() < COUPLING else rng.random()
                success = bool(latent < p)
                achieved = MILESTONES if success else int(rng.integers(0, MILESTONES))
                answers = [i < achieved for i in range(MILESTONES)]
                answers += [not success and bool(rng.random() < 0.5), False]
                rollout_id = f"ro-{seed:x}-{counter:06d}"
                counter += 1
                started, ended = _timestamps(counter)
                evaluator = EVALUATORS[counter % len(EVALUATORS)]
                session_log.record_slot_event(
                    session, assignment.bundle_id, assignment.slot,
                    rollout_id, "running", evaluator_id=evaluator,
                )
                session_log.record_slot_event(
                    session, assignment.bundle_id, assignment.slot,
                    rollout_id, "done", evaluator_id=evaluator,
                )
                records.append(
                    RolloutRecord.from_wire(
                        {
                            "rollout_id": rollout_id,
                            "task": task,
                            "policy": assignment.blinding_code,
                            "condition": {"kind": "nominal"},
                            "station": "sim-station-01",
                            "started_at": started,
                            "ended_at": ended,
                            "success": success,
                            "terminal_reason": "success" if success else "timeout",
                            "rubric_answers": answers,
                            "bundle_id": assignment.bundle_id,
                            "evaluator_id": evaluator,
                        }
                    )
                )
        write_rollout_log(RolloutStore(records), root / "logs" / f"{task}.jsonl")

    config = {
        "schema_version": 1,
        "seed": seed,
        "alpha": 0.05,
        "rubrics": "rubrics.json",
        "logs": [f"logs/{task}.jsonl" for task in tasks],
        "policies": [
            {
                "policy_id": policy,
                "display_name": policy.replace("-", " "),
                "codes": sorted(c for c, p in code_maps.items() if p == policy),
            }
            for policy in POLICIES
        ],
    }
    config_path = root / "campaign.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return config_path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="campaign directory to create")
    parser.add_argument("--seed", type=int, default=20260701)
    parser.add_argument("--n-bundles", type=int, default=50)
    args = parser.parse_args()
    config_path = build_campaign(Path(args.out), seed=args.seed, n_bundles=args.n_bundles)
    print(f"campaign config at {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
