"""Campaign reports: ingestion through posteriors, comparisons, and CLD.

A report is a pure function of (config, input files, seed): no wall-clock
values enter the outputs, every float serializes losslessly in JSON (repr)
and to 6 significant digits in CSV, and iteration orders are fixed, so a
rerun is byte-identical. Outputs build in a staging directory and move into
place only on success.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .comparison import (
    ComparisonMatrix,
    SequentialBoundary,
    cld_letters,
    compare_all,
    load_default_boundary,
)
from .posterior import (
    BetaPosterior,
    aggregate_tasks,
    beta_posterior,
    dirichlet_mean_posterior,
    raw_tc_distribution,
)
from .rollout import RolloutRecord, RolloutStore, parse_rollout_log
from .scoring import RubricSpec, load_rubric_specs, rubric_lengths, score_rubric

REPORT_SCHEMA_VERSION = 1


class ReportError(ValueError):
    pass


def _qualified(exc: BaseException) -> str:
    module = type(exc).__module__
    origin = module.rsplit(".", 1)[-1] if module.startswith("evalkit") else module
    return f"{origin}: {exc}"


@dataclass(frozen=True)
class CampaignConfig:
    """Declarative campaign description consumed by run_report."""

    policies: tuple[dict[str, Any], ...]
    logs: tuple[str, ...]
    seed: int = 0
    alpha: float = 0.05
    rubrics: str | None = None
    include_dangerous: bool = True
    tc_draws: int = 20000
    boundary_config: str | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        if not self.policies:
            raise ReportError("config lists no policies")
        ids = [p["policy_id"] for p in self.policies]
        if len(set(ids)) != len(ids):
            raise ReportError("duplicate policy ids in config")
        if not self.logs:
            raise ReportError("config lists no rollout logs")
        if not 0.0 < self.alpha < 1.0:
            raise ReportError(f"alpha must be in (0, 1), got {self.alpha}")

    @property
    def policy_ids(self) -> tuple[str, ...]:
        return tuple(p["policy_id"] for p in self.policies)

    def code_map(self) -> dict[str, str]:
        mapping: dict[str, str] = {}
        for p in self.policies:
            for code in p.get("codes", ()):
                if code in mapping:
                    raise ReportError(f"blinding code mapped twice: {code}")
                mapping[code] = p["policy_id"]
        return mapping

    def resolve(self, rel: str) -> Path:
        path = Path(rel)
        return path if path.is_absolute() else self.base_dir / path

    @classmethod
    def load(cls, path: str | Path) -> "CampaignConfig":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            policies=tuple(doc["policies"]),
            logs=tuple(doc["logs"]),
            seed=int(doc.get("seed", 0)),
            alpha=float(doc.get("alpha", 0.05)),
            rubrics=doc.get("rubrics"),
            include_dangerous=bool(doc.get("include_dangerous", True)),
            tc_draws=int(doc.get("tc_draws", 20000)),
            boundary_config=doc.get("boundary_config"),
            base_dir=path.parent,
        )


@dataclass(frozen=True)
class ReportBundle:
    out_dir: Path
    files: tuple[str, ...]
    provenance: Mapping[str, Any]
    tasks: tuple[str, ...]
    conditions: tuple[str, ...]


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dump_json(data: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sig6(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, bool)):
        return str(int(value))
    return format(float(value), ".6g")


def _write_csv(rows: Sequence[Sequence[Any]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(str(cell) for cell in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _unblind_store(store: RolloutStore, code_map: Mapping[str, str]) -> RolloutStore:
    if not code_map:
        return store
    records = [
        replace(rec, policy=code_map.get(rec.policy, rec.policy)) for rec in store.records
    ]
    return RolloutStore(records, store.rejected)


def _paired_sequences(
    records_by_policy: Mapping[str, Sequence[RolloutRecord]],
    policies: Sequence[str],
) -> tuple[dict[tuple[str, str], list[tuple[int, int]]], dict[str, int]]:
    """Per-pair paired outcome sequences in sorted bundle order."""
    outcomes: dict[str, dict[str, bool]] = {}
    for policy in policies:
        for rec in records_by_policy.get(policy, ()):
            if rec.bundle_id is None:
                continue
            bundle = outcomes.setdefault(rec.bundle_id, {})
            if policy not in bundle:
                bundle[policy] = rec.success
    sequences: dict[tuple[str, str], list[tuple[int, int]]] = {}
    skipped: dict[str, int] = {}
    for i, pa in enumerate(policies):
        for pb in policies[i + 1 :]:
            seq: list[tuple[int, int]] = []
            missing = 0
            for bundle_id in sorted(outcomes):
                bundle = outcomes[bundle_id]
                if pa in bundle and pb in bundle:
                    seq.append((int(bundle[pa]), int(bundle[pb])))
                else:
                    missing += 1
            sequences[(pa, pb)] = seq
            skipped[f"{pa}|{pb}"] = missing
    return sequences, skipped


def _interleave(per_task: Sequence[Sequence[tuple[int, int]]]) -> list[tuple[int, int]]:
    """Round-robin merge of per-task pair sequences (bundle 0 of every task,
    then bundle 1 of every task, and so on)."""
    merged: list[tuple[int, int]] = []
    depth = max((len(seq) for seq in per_task), default=0)
    for index in range(depth):
        for seq in per_task:
            if index < len(seq):
                merged.append(seq[index])
    return merged


def _beta_record(posterior: BetaPosterior) -> dict[str, Any]:
    record = posterior.to_record()
    record["density"] = posterior.density_grid().to_record()
    return record


def _matrix_section(
    matrix: ComparisonMatrix | None, extra: Mapping[str, Any] | None = None
) -> Any:
    if matrix is None:
        return None
    section: dict[str, Any] = {"matrix": matrix.to_record(), "cld": cld_letters(matrix).to_record()}
    if extra:
        section.update(extra)
    return section


def _tc_values(rec: RolloutRecord, spec: RubricSpec) -> float:
    return score_rubric(rec.rubric_answers, spec).value


class _CellAnalysis:
    """Everything reported for one (task, condition) pair."""

    def __init__(
        self,
        task: str,
        condition: str,
        store: RolloutStore,
        policies: Sequence[str],
        specs: Mapping[str, RubricSpec],
        config: CampaignConfig,
        boundary: SequentialBoundary,
    ) -> None:
        self.task = task
        self.condition = condition
        self.policies = [p for p in policies if store.cell(task, p, condition)]
        self.records = {p: store.cell(task, p, condition) for p in self.policies}
        self.counts = {
            p: store.counts(task, p, condition, config.include_dangerous)
            for p in self.policies
        }
        self.posteriors = {
            p: beta_posterior(c.successes, c.trials) for p, c in self.counts.items()
        }
        spec = specs.get(task)
        self.milestone_count = spec.milestone_count if spec else None
        self.tc_samples = {}
        if spec is not None:
            for p in self.policies:
                values = [
                    _tc_values(r, spec) for r in self.records[p] if r.rubric_answers
                ]
                if values:
                    self.tc_samples[p] = values
        self.sequences, self.skipped = _paired_sequences(self.records, self.policies)
        self.binary_matrix = self._run_binary(config, boundary)
        self.welch_matrix = self._run_welch(config)

    def _run_binary(
        self, config: CampaignConfig, boundary: SequentialBoundary
    ) -> ComparisonMatrix | None:
        if len(self.policies) < 2:
            return None
        if any(not seq for seq in self.sequences.values()):
            return None
        return compare_all(
            self.policies,
            self.sequences,
            metric="binary_sequential",
            global_alpha=config.alpha,
            boundary=boundary,
        )

    def _run_welch(self, config: CampaignConfig) -> ComparisonMatrix | None:
        if len(self.policies) < 2:
            return None
        if any(p not in self.tc_samples or len(self.tc_samples[p]) < 2 for p in self.policies):
            return None
        return compare_all(
            self.policies,
            self.tc_samples,
            metric="tc_welch",
            global_alpha=config.alpha,
        )

    def sr_posterior_doc(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "condition": self.condition,
            "policies": {
                p: {
                    **_beta_record(self.posteriors[p]),
                    "dangerous": self.counts[p].dangerous,
                }
                for p in self.policies
            },
        }

    def tc_doc(self, config: CampaignConfig, seed_parts: Sequence[int]) -> dict[str, Any]:
        policies = {}
        for index, p in enumerate(sorted(self.tc_samples)):
            raw = raw_tc_distribution(self.tc_samples[p], self.milestone_count)
            mean_grid = dirichlet_mean_posterior(
                self.tc_samples[p],
                self.milestone_count,
                draws=config.tc_draws,
                seed=list(seed_parts) + [index],
            )
            policies[p] = {
                "raw": raw.to_record(),
                "mean_posterior": mean_grid.to_record(),
                "n": len(self.tc_samples[p]),
            }
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "condition": self.condition,
            "milestone_count": self.milestone_count,
            "policies": policies,
        }

    def comparisons_doc(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "condition": self.condition,
            "binary_sequential": _matrix_section(
                self.binary_matrix, {"skipped_pairs": self.skipped}
            ),
            "tc_welch": _matrix_section(self.welch_matrix),
        }

    def cld_rows(self) -> list[list[Any]]:
        letters_binary = (
            dict(zip(self.policies, cld_letters(self.binary_matrix).letters))
            if self.binary_matrix
            else {}
        )
        letters_tc = (
            dict(zip(self.policies, cld_letters(self.welch_matrix).letters))
            if self.welch_matrix
            else {}
        )
        rows = []
        for p in self.policies:
            counts = self.counts[p]
            mean_tc = (
                sum(self.tc_samples[p]) / len(self.tc_samples[p])
                if p in self.tc_samples
                else None
            )
            rows.append(
                [
                    p,
                    letters_binary.get(p, ""),
                    letters_tc.get(p, ""),
                    counts.successes,
                    counts.trials,
                    _sig6(counts.rate),
                    _sig6(mean_tc),
                ]
            )
        return rows


CLD_HEADER = ["policy", "letters_binary", "letters_tc", "successes", "trials", "empirical_sr", "mean_tc"]


def run_report(config: CampaignConfig | str | Path, out_dir: str | Path) -> ReportBundle:
    """Build the full report tree under out_dir.

    Layout: out_dir/{task}/{condition}/{sr_posterior.json, tc_raw.json,
    comparisons.json, cld.csv}, out_dir/aggregate/{condition}/..., and a
    provenance manifest at out_dir/report.json. Fails without leaving
    partial outputs; errors carry their originating module's name.
    """
    if not isinstance(config, CampaignConfig):
        config = CampaignConfig.load(config)
    out_dir = Path(out_dir)
    staging = out_dir.parent / f".{out_dir.name}.staging"
    if staging.exists():
        shutil.rmtree(staging)
    try:
        bundle = _build_report(config, out_dir, staging)
    except ReportError:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    except Exception as exc:  # qualify foreign errors with the module they came from
        shutil.rmtree(staging, ignore_errors=True)
        raise ReportError(_qualified(exc)) from exc
    if out_dir.exists():
        shutil.rmtree(out_dir)
    staging.replace(out_dir)
    return bundle


def _build_report(config: CampaignConfig, out_dir: Path, staging: Path) -> ReportBundle:
    digests: dict[str, str] = {}
    specs: Mapping[str, RubricSpec] = {}
    if config.rubrics is not None:
        rubric_path = config.resolve(config.rubrics)
        if not rubric_path.exists():
            raise ReportError(f"report: rubric spec file missing: {rubric_path}")
        specs = load_rubric_specs(rubric_path)
        digests[str(config.rubrics)] = _sha256(rubric_path)
    lengths = rubric_lengths(specs.values()) if specs else None

    store: RolloutStore | None = None
    for rel in config.logs:
        log_path = config.resolve(rel)
        if not log_path.exists():
            raise ReportError(f"report: rollout log missing: {log_path}")
        digests[str(rel)] = _sha256(log_path)
        parsed = parse_rollout_log(log_path, rubric_lengths=lengths)
        store = parsed if store is None else store.merge(parsed)
    assert store is not None
    store = _unblind_store(store, config.code_map())

    boundary = (
        SequentialBoundary.load(config.resolve(config.boundary_config))
        if config.boundary_config
        else load_default_boundary()
    )
    if config.boundary_config:
        digests[str(config.boundary_config)] = _sha256(config.resolve(config.boundary_config))

    tasks = store.tasks()
    conditions = store.condition_labels()
    policies = config.policy_ids

    staging.mkdir(parents=True)
    files: list[str] = []
    analyses: dict[tuple[str, str], _CellAnalysis] = {}
    for t_index, task in enumerate(tasks):
        for c_index, condition in enumerate(conditions):
            cell = _CellAnalysis(task, condition, store, policies, specs, config, boundary)
            if not cell.policies:
                continue
            analyses[(task, condition)] = cell
            base = staging / task / condition
            _dump_json(cell.sr_posterior_doc(), base / "sr_posterior.json")
            _dump_json(
                cell.tc_doc(config, [config.seed, t_index, c_index]), base / "tc_raw.json"
            )
            _dump_json(cell.comparisons_doc(), base / "comparisons.json")
            _write_csv([CLD_HEADER] + cell.cld_rows(), base / "cld.csv")
            for name in ("sr_posterior.json", "tc_raw.json", "comparisons.json", "cld.csv"):
                files.append(f"{task}/{condition}/{name}")

    for condition in conditions:
        cells = [analyses[(t, condition)] for t in tasks if (t, condition) in analyses]
        if not cells:
            continue
        base = staging / "aggregate" / condition
        _aggregate_condition(condition, cells, policies, config, boundary, base)
        for name in ("sr_posterior.json", "comparisons.json", "cld.csv"):
            files.append(f"aggregate/{condition}/{name}")

    provenance = {
        "generator": f"evalkit {__version__}",
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": config.seed,
        "alpha": config.alpha,
        "include_dangerous": config.include_dangerous,
        "input_digests": digests,
        "boundary": {
            "horizon": boundary.horizon,
            "replications": boundary.replications,
            "seed": boundary.seed,
        },
        "policies": list(policies),
        "tasks": list(tasks),
        "conditions": list(conditions),
        "rejected_lines": len(store.rejected),
    }
    _dump_json(provenance, staging / "report.json")
    files.append("report.json")

    return ReportBundle(
        out_dir=out_dir,
        files=tuple(files),
        provenance=provenance,
        tasks=tasks,
        conditions=conditions,
    )


def _aggregate_condition(
    condition: str,
    cells: Sequence[_CellAnalysis],
    policies: Sequence[str],
    config: CampaignConfig,
    boundary: SequentialBoundary,
    base: Path,
) -> None:
    present = [p for p in policies if any(p in cell.policies for cell in cells)]
    pooled: dict[str, BetaPosterior] = {}
    for p in present:
        pooled[p] = aggregate_tasks(
            (cell.counts[p].successes, cell.counts[p].trials)
            for cell in cells
            if p in cell.policies
        )
    _dump_json(
        {
            "schema_version": REPORT_SCHEMA_VERSION,
            "condition": condition,
            "policies": {p: _beta_record(pooled[p]) for p in present},
        },
        base / "sr_posterior.json",
    )

    binary_matrix = None
    if len(present) >= 2:
        data: dict[tuple[str, str], list[tuple[int, int]]] = {}
        complete = True
        for i, pa in enumerate(present):
            for pb in present[i + 1 :]:
                merged = _interleave(
                    [cell.sequences.get((pa, pb), []) for cell in cells]
                )
                if not merged:
                    complete = False
                data[(pa, pb)] = merged
        if complete:
            binary_matrix = compare_all(
                present,
                data,
                metric="binary_sequential",
                global_alpha=config.alpha,
                boundary=boundary,
            )

    welch_matrix = None
    tc_pooled: dict[str, list[float]] = {}
    for p in present:
        samples: list[float] = []
        for cell in cells:
            samples.extend(cell.tc_samples.get(p, ()))
        if len(samples) >= 2:
            tc_pooled[p] = samples
    if len(present) >= 2 and all(p in tc_pooled for p in present):
        welch_matrix = compare_all(
            present, tc_pooled, metric="tc_welch", global_alpha=config.alpha
        )

    _dump_json(
        {
            "schema_version": REPORT_SCHEMA_VERSION,
            "condition": condition,
            "binary_sequential": _matrix_section(binary_matrix),
            "tc_welch": _matrix_section(welch_matrix),
            "note": "pooled across tasks; treats per-task trials as exchangeable",
        },
        base / "comparisons.json",
    )

    letters_binary = (
        dict(zip(present, cld_letters(binary_matrix).letters)) if binary_matrix else {}
    )
    letters_tc = dict(zip(present, cld_letters(welch_matrix).letters)) if welch_matrix else {}
    rows: list[list[Any]] = [CLD_HEADER]
    for p in present:
        posterior = pooled[p]
        mean_tc = (
            sum(tc_pooled[p]) / len(tc_pooled[p]) if p in tc_pooled else None
        )
        rows.append(
            [
                p,
                letters_binary.get(p, ""),
                letters_tc.get(p, ""),
                posterior.successes,
                posterior.trials,
                _sig6(posterior.empirical_rate),
                _sig6(mean_tc),
            ]
        )
    _write_csv(rows, base / "cld.csv")
