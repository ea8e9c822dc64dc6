"""Command-line entry points.

One subcommand per pipeline stage: ingest, validate, score, posterior,
compare, report, bundles, calibrate, normalize, filter, serve. Unknown
subcommands or flags exit 2 with usage (argparse default); operational
failures print a module-qualified error and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .comparison import cld_letters, compare_all
from .datatools import NormalizerRegistry, filter_low_motion, load_demos, write_demos
from .posterior import beta_posterior
from .protocol import SessionLog, create_session
from .report import CampaignConfig, ReportError, run_report
from .rollout import parse_rollout_log, validate_store, write_rollout_log
from .scoring import load_rubric_specs, rubric_lengths, score_rubric


def _emit(data: Any, fmt: str = "json") -> None:
    if fmt == "json":
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        raise ValueError(f"unknown output format: {fmt}")


def _load_store(paths: Sequence[str], rubrics: str | None):
    lengths = None
    if rubrics:
        lengths = rubric_lengths(load_rubric_specs(rubrics).values())
    store = None
    for path in paths:
        parsed = parse_rollout_log(path, rubric_lengths=lengths)
        store = parsed if store is None else store.merge(parsed)
    if store is None:
        raise ValueError("no rollout logs given")
    return store


def _cmd_ingest(args: argparse.Namespace) -> int:
    store = _load_store(args.logs, args.rubrics)
    for lineno, reason in store.rejected:
        print(f"rejected line {lineno}: {reason}", file=sys.stderr)
    write_rollout_log(store, args.out)
    print(
        f"ingested {len(store.records)} rollouts "
        f"({len(store.rejected)} rejected) -> {args.out}"
    )
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    store = _load_store(args.logs, args.rubrics)
    plan_doc = json.loads(Path(args.plan).read_text(encoding="utf-8"))
    plan = {
        (row["task"], row["policy"], row["condition"]): int(row["trials"])
        for row in plan_doc
    }
    report = validate_store(store, plan)
    for cell in report.cells:
        marker = "ok" if cell.missing == 0 else f"missing {cell.missing}"
        task, policy, condition = cell.key
        print(f"{task}/{policy}/{condition}: {cell.observed}/{cell.expected} ({marker})")
    print(f"complete: {report.complete} (total missing {report.total_missing})")
    return 0 if report.complete else 1


def _cmd_score(args: argparse.Namespace) -> int:
    store = _load_store(args.logs, args.rubrics)
    specs = load_rubric_specs(args.rubrics)
    rows = []
    for rec in store.records:
        spec = specs.get(rec.task)
        tc = (
            score_rubric(rec.rubric_answers, spec).value
            if spec is not None and rec.rubric_answers
            else None
        )
        rows.append(
            {
                "rollout_id": rec.rollout_id,
                "task": rec.task,
                "policy": rec.policy,
                "success": rec.success,
                "tc": tc,
            }
        )
    _emit(rows, args.format)
    return 0


def _cmd_posterior(args: argparse.Namespace) -> int:
    posterior = beta_posterior(args.successes, args.trials)
    record = posterior.to_record()
    if args.density:
        record["density"] = posterior.density_grid(args.points).to_record()
    _emit(record, args.format)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    # Comparison over one (task, condition) cell of an ingested log; binary
    # uses bundle-paired sequential testing, tc uses Welch on rubric scores.
    from .report import _CellAnalysis  # shared cell assembly
    from .comparison import load_default_boundary

    store = _load_store(args.logs, args.rubrics)
    specs = load_rubric_specs(args.rubrics) if args.rubrics else {}
    task = args.task or store.tasks()[0]
    condition = args.condition or store.condition_labels()[0]
    policies = args.policies.split(",") if args.policies else list(store.policies())
    config = CampaignConfig(
        policies=tuple({"policy_id": p} for p in policies),
        logs=tuple(args.logs),
        alpha=args.alpha,
    )
    cell = _CellAnalysis(
        task, condition, store, policies, specs, config, load_default_boundary()
    )
    matrix = cell.binary_matrix if args.metric == "binary" else cell.welch_matrix
    if matrix is None:
        raise ValueError(
            f"not enough data for metric {args.metric} on {task}/{condition}"
        )
    _emit(
        {
            "task": task,
            "condition": condition,
            "matrix": matrix.to_record(),
            "cld": cld_letters(matrix).to_record(),
        },
        args.format,
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    bundle = run_report(args.config, args.out)
    for name in bundle.files:
        print(name)
    print(f"report written to {bundle.out_dir}")
    return 0


def _cmd_bundles(args: argparse.Namespace) -> int:
    session = create_session(
        policies=args.policies.split(","),
        tasks=args.tasks.split(","),
        n_bundles=args.n_bundles,
        condition=args.condition,
        rng_seed=args.seed,
    )
    if args.out:
        log = SessionLog(args.out)
        log.record_session(session)
    _emit(
        {
            "session_id": session.session_id,
            "bundles": len(session.bundles),
            "slots": session.total_slots,
            "codes": sorted(session.code_to_policy()),
        },
        args.format,
    )
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    from .synthlab import calibrate_sequential_boundary

    report = calibrate_sequential_boundary(
        alpha=args.alpha,
        horizon=args.horizon,
        replications=args.replications,
        seed=args.seed,
    )
    if args.out:
        report.to_boundary().save(args.out)
    _emit(report.to_record(), args.format)
    return 0


def _cmd_normalize(args: argparse.Namespace) -> int:
    registry = NormalizerRegistry()
    if args.mode == "fit":
        import numpy as np

        samples = np.asarray(json.loads(Path(args.samples).read_text(encoding="utf-8")))
        registry.fit(args.source, samples, exempt_dims=args.exempt or ())
        registry.save(args.out)
        print(f"fitted normalizer for {args.source} -> {args.out}")
        return 0
    registry = NormalizerRegistry.load(args.table)
    import numpy as np

    sample = np.asarray(json.loads(Path(args.samples).read_text(encoding="utf-8")))
    out = registry.for_source(args.source).normalize_sample(sample)
    _emit(out.tolist(), args.format)
    return 0


def _cmd_filter(args: argparse.Namespace) -> int:
    demos = load_demos(args.demos)
    results = [filter_low_motion(demo) for demo in demos]
    if args.out:
        write_demos((r.trajectory for r in results), args.out)
    _emit(
        [
            {
                "demo_id": r.trajectory.demo_id,
                "first_motion_index": r.first_motion_index,
                "removed_frames": r.removed_frames,
                "never_moved": r.never_moved,
            }
            for r in results
        ],
        args.format,
    )
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig.load(args.config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", default="json", choices=["json"], help="output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evalkit", description="Blind-trial policy evaluation toolkit."
    )
    parser.add_argument("--version", action="version", version=f"evalkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse rollout logs into one canonical log")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--rubrics", help="rubric spec file for answer-length checks")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("validate", help="check a log against a trial plan")
    p.add_argument("logs", nargs="+")
    p.add_argument("--plan", required=True, help="JSON list of cell trial counts")
    p.add_argument("--rubrics")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("score", help="rubric task-completion scores per rollout")
    p.add_argument("logs", nargs="+")
    p.add_argument("--rubrics", required=True)
    _add_format(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("posterior", help="Beta posterior for a success count")
    p.add_argument("--successes", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--density", action="store_true", help="include the density grid")
    _add_format(p)
    p.set_defaults(func=_cmd_posterior)

    p = sub.add_parser("compare", help="pairwise comparison matrix with CLD letters")
    p.add_argument("logs", nargs="+")
    p.add_argument("--metric", choices=["binary", "tc"], default="binary")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--task")
    p.add_argument("--condition")
    p.add_argument("--policies", help="comma-separated policy order")
    p.add_argument("--rubrics")
    _add_format(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="build the full campaign report tree")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bundles", help="create a blinded session of rollout bundles")
    p.add_argument("--policies", required=True, help="comma-separated policy ids")
    p.add_argument("--tasks", required=True, help="comma-separated task ids")
    p.add_argument("--n-bundles", type=int, required=True)
    p.add_argument("--condition", default="nominal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="session log path")
    _add_format(p)
    p.set_defaults(func=_cmd_bundles)

    p = sub.add_parser("calibrate", help="Monte Carlo calibration of the stopping boundary")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--replications", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="boundary config destination")
    _add_format(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("normalize", help="fit or apply percentile normalizers")
    modes = p.add_subparsers(dest="mode", required=True)
    fit = modes.add_parser("fit", help="fit a per-source normalizer table")
    fit.add_argument("--samples", required=True, help="JSON (N, D, T) array")
    fit.add_argument("--source", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--exempt", type=int, nargs="*", help="dimensions passed through")
    fit.set_defaults(func=_cmd_normalize)
    apply_ = modes.add_parser("apply", help="normalize a sample with a saved table")
    apply_.add_argument("--table", required=True)
    apply_.add_argument("--samples", required=True, help="JSON (D, T) array")
    apply_.add_argument("--source", required=True)
    _add_format(apply_)
    apply_.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("filter", help="drop pre-motion frames from demonstrations")
    p.add_argument("--demos", required=True)
    p.add_argument("--out")
    _add_format(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("serve", help="run the evaluation HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        module = type(exc).__module__
        origin = module.rsplit(".", 1)[-1] if module.startswith("evalkit") else "evalkit"
        print(f"error: {origin}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
