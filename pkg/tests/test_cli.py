"""Command-line interface: exit codes, golden outputs, pipeline smoke runs."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from conftest import make_record

from evalkit.cli import main
from evalkit.comparison import SequentialBoundary
from evalkit.datatools import DemoTrajectory, Frame, NormalizerRegistry, write_demos
from evalkit.protocol import SessionLog, replay_sessions
from evalkit.rollout import RolloutStore, parse_rollout_log, write_rollout_log


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_three_policy_log(path, bundles=30):
    """policy-a always succeeds; policy-b and policy-c never do."""
    records = []
    counter = 0
    for b in range(bundles):
        for policy, success in (("policy-a", True), ("policy-b", False), ("policy-c", False)):
            records.append(
                make_record(
                    rollout_id=f"ro-{counter:04d}",
                    policy=policy,
                    success=success,
                    bundle_id=f"b-{b:03d}",
                )
            )
            counter += 1
    write_rollout_log(RolloutStore(records), path)
    return path


# -- exit codes --------------------------------------------------------------------


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    assert "ingest" in capsys.readouterr().out


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["posterior", "--successes", "1", "--trials", "2", "--bogus"])
    assert excinfo.value.code == 2


def test_version_names_the_package(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("evalkit ")


def test_operational_failures_exit_one_with_module_prefix(capsys, tmp_path):
    code, _, err = run(
        capsys, "posterior", "--successes", "5", "--trials", "2"
    )
    assert code == 1
    assert err.startswith("error: posterior: ")

    config = tmp_path / "campaign.json"
    config.write_text(
        json.dumps(
            {"policies": [{"policy_id": "a"}, {"policy_id": "b"}], "logs": ["missing.jsonl"]}
        )
    )
    code, _, err = run(capsys, "report", "--config", str(config), "--out", str(tmp_path / "o"))
    assert code == 1
    assert err.startswith("error: report: rollout log missing")


# -- posterior and compare goldens ----------------------------------------------------


def test_posterior_reports_the_empirical_rate_exactly(capsys):
    code, out, _ = run(capsys, "posterior", "--successes", "27", "--trials", "200")
    assert code == 0
    record = json.loads(out)
    assert record["successes"] == 27
    assert record["trials"] == 200
    assert record["empirical_rate"] == 0.135
    assert record["posterior_mean"] == pytest.approx(28 / 202)


def test_posterior_density_flag_controls_the_grid(capsys):
    code, out, _ = run(
        capsys, "posterior", "--successes", "3", "--trials", "10",
        "--density", "--points", "64",
    )
    assert code == 0
    record = json.loads(out)
    assert len(record["density"]["support"]) == 64
    assert record["density"]["mean_marker"] == 0.3


def test_compare_separates_a_planted_dominance(capsys, tmp_path):
    log = write_three_policy_log(tmp_path / "log.jsonl")
    code, out, _ = run(
        capsys, "compare", str(log), "--policies", "policy-a,policy-b,policy-c"
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["task"] == "stack-dishes"
    pairs = {(p["policy_a"], p["policy_b"]): p for p in doc["matrix"]["pairs"]}
    ab = pairs[("policy-a", "policy-b")]
    assert ab["verdict"] == "A_better"
    assert ab["stopped_at"] == 8
    assert ab["statistic"] == pytest.approx(8 * math.log(2), abs=1e-12)
    assert ab["alpha_used"] == pytest.approx(0.05 / 3)
    assert pairs[("policy-b", "policy-c")]["verdict"] == "not_separated"
    letters = dict(zip(doc["cld"]["policies"], doc["cld"]["letters"]))
    assert letters == {"policy-a": "a", "policy-b": "b", "policy-c": "b"}


def test_compare_refuses_cells_without_enough_data(capsys, tmp_path):
    store = RolloutStore([make_record()])  # one record, no bundle pairing
    log = tmp_path / "log.jsonl"
    write_rollout_log(store, log)
    code, _, err = run(capsys, "compare", str(log))
    assert code == 1
    assert err.startswith("error: ")


# -- pipeline smoke runs ---------------------------------------------------------


def test_ingest_writes_a_canonical_log(capsys, tmp_path):
    raw = tmp_path / "raw.jsonl"
    lines = [json.dumps(make_record(rollout_id=f"ro-{i}").to_wire()) for i in range(3)]
    raw.write_text("\n".join(lines + ['{"broken": true}']) + "\n")
    out = tmp_path / "canonical.jsonl"
    code, stdout, stderr = run(capsys, "ingest", str(raw), "--out", str(out))
    assert code == 0
    assert "ingested 3 rollouts (1 rejected)" in stdout
    assert "rejected line 4" in stderr
    assert len(parse_rollout_log(out).records) == 3


def test_validate_reports_missing_cells(capsys, tmp_path):
    log = tmp_path / "log.jsonl"
    write_rollout_log(
        RolloutStore([make_record(rollout_id=f"ro-{i}") for i in range(3)]), log
    )
    plan = tmp_path / "plan.json"
    plan.write_text(
        json.dumps(
            [{"task": "stack-dishes", "policy": "policy-a", "condition": "nominal", "trials": 3}]
        )
    )
    code, out, _ = run(capsys, "validate", str(log), "--plan", str(plan))
    assert code == 0
    assert "complete: True" in out

    plan.write_text(
        json.dumps(
            [{"task": "stack-dishes", "policy": "policy-a", "condition": "nominal", "trials": 5}]
        )
    )
    code, out, _ = run(capsys, "validate", str(log), "--plan", str(plan))
    assert code == 1
    assert "missing 2" in out


def test_score_emits_tc_per_rollout(capsys, demo_campaign):
    config = json.loads(demo_campaign.read_text())
    logs = [str(demo_campaign.parent / rel) for rel in config["logs"]]
    rubrics = str(demo_campaign.parent / config["rubrics"])
    code, out, _ = run(capsys, "score", *logs, "--rubrics", rubrics)
    assert code == 0
    rows = json.loads(out)
    assert len(rows) == 108  # 3 tasks x 12 bundles x 3 policies
    assert all(0.0 <= row["tc"] <= 1.0 for row in rows)
    assert all(row["tc"] == 1.0 for row in rows if row["success"])


def test_report_command_builds_the_tree(capsys, demo_campaign, tmp_path):
    out_dir = tmp_path / "report"
    code, out, _ = run(
        capsys, "report", "--config", str(demo_campaign), "--out", str(out_dir)
    )
    assert code == 0
    assert (out_dir / "report.json").is_file()
    assert "report written to" in out
    assert "aggregate/nominal/cld.csv" in out


def test_bundles_creates_a_deterministic_session(capsys, tmp_path):
    session_log = tmp_path / "sessions.jsonl"
    argv = (
        "bundles", "--policies", "policy-a,policy-b", "--tasks", "taskA,taskB",
        "--n-bundles", "3", "--seed", "99", "--out", str(session_log),
    )
    code, out, _ = run(capsys, *argv)
    assert code == 0
    doc = json.loads(out)
    assert doc["bundles"] == 6
    assert doc["slots"] == 12
    assert len(doc["codes"]) == 2

    sessions = replay_sessions(SessionLog(session_log).events())
    assert doc["session_id"] in sessions

    code, out2, _ = run(capsys, *argv[:-2])  # same seed, no log
    assert json.loads(out2)["session_id"] == doc["session_id"]


def test_calibrate_writes_a_loadable_boundary(capsys, tmp_path):
    boundary_path = tmp_path / "boundary.json"
    code, out, _ = run(
        capsys, "calibrate", "--horizon", "20", "--replications", "2000",
        "--seed", "3", "--out", str(boundary_path),
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["horizon"] == 20
    boundary = SequentialBoundary.load(boundary_path)
    assert boundary.constant_for(0.05) == doc["boundary_constant"]


def test_normalize_fit_then_apply_round_trip(capsys, tmp_path):
    rng = np.random.default_rng(8)
    dataset = rng.normal(size=(20, 2, 3))
    samples_path = tmp_path / "train.json"
    samples_path.write_text(json.dumps(dataset.tolist()))
    table_path = tmp_path / "table.json"
    code, out, _ = run(
        capsys, "normalize", "fit", "--samples", str(samples_path),
        "--source", "rig-a", "--out", str(table_path), "--exempt", "1",
    )
    assert code == 0
    assert "rig-a" in out

    sample = rng.normal(size=(2, 3))
    sample_path = tmp_path / "sample.json"
    sample_path.write_text(json.dumps(sample.tolist()))
    code, out, _ = run(
        capsys, "normalize", "apply", "--table", str(table_path),
        "--samples", str(sample_path), "--source", "rig-a",
    )
    assert code == 0
    expected = NormalizerRegistry.load(table_path).normalize_demo_sample("rig-a", sample)
    assert np.array_equal(np.asarray(json.loads(out)), expected)


def test_filter_command_reports_and_writes_trimmed_demos(capsys, tmp_path):
    still = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    moved = (0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    frames = tuple(
        Frame(t=float(i), left=still if i < 3 else moved, right=still, grippers=(0.0, 0.0))
        for i in range(5)
    )
    demos_path = tmp_path / "demos.jsonl"
    write_demos([DemoTrajectory(demo_id="demo-1", source="rig-a", frames=frames)], demos_path)
    out_path = tmp_path / "trimmed.jsonl"
    code, out, _ = run(
        capsys, "filter", "--demos", str(demos_path), "--out", str(out_path)
    )
    assert code == 0
    (row,) = json.loads(out)
    assert row == {
        "demo_id": "demo-1",
        "first_motion_index": 3,
        "removed_frames": 3,
        "never_moved": False,
    }
    from evalkit.datatools import load_demos

    (trimmed,) = load_demos(out_path)
    assert len(trimmed) == 2
