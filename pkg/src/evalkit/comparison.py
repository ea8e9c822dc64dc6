"""Pairwise separation of k policies with multiplicity control and CLD letters.

Binary outcomes use a sequential test on paired trials: concordant pairs
carry no information about which policy is better, so the test watches only
discordant pairs, whose direction is an iid fair coin under the exchangeable
null whatever the within-pair correlation. The generalized likelihood ratio
d * KL(s/d || 1/2) is compared against a slowly growing boundary
c(alpha) + 0.5 * ln(1 + ln d); the constant c(alpha) is calibrated by Monte
Carlo (see the companion calibration module) and shipped frozen in
boundary_config.json. Task-completion samples use Welch's t-test. Both feed
a comparison matrix with Bonferroni-adjusted per-test alpha and a compact
letter display.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from scipy import stats

A_BETTER = "A_better"
B_BETTER = "B_better"
NOT_SEPARATED = "not_separated"

BOUNDARY_PENALTY = "0.5*log1p(log(d))"
BOUNDARY_SCHEMA_VERSION = 1


class ComparisonError(ValueError):
    pass


class BoundaryConfigError(ComparisonError):
    pass


def bernoulli_kl_vs_half(q: float) -> float:
    """KL(Bernoulli(q) || Bernoulli(1/2)), with the 0*log(0) = 0 convention."""
    if not 0.0 <= q <= 1.0:
        raise ComparisonError(f"q must be in [0, 1], got {q}")
    total = math.log(2.0)
    if q > 0.0:
        total += q * math.log(q)
    if q < 1.0:
        total += (1.0 - q) * math.log(1.0 - q)
    return total


@dataclass(frozen=True)
class SequentialBoundary:
    """Calibrated rejection boundary for the discordant-pair GLR test.

    The boundary at discordant count d is constant(alpha) + 0.5*ln(1+ln d).
    Constants are calibrated per alpha against a frozen Monte Carlo run; a
    requested alpha not in the table conservatively borrows the constant of
    the largest calibrated alpha that does not exceed it. Below the table's
    smallest alpha there is nothing conservative to borrow, so lookup fails
    rather than extrapolating.
    """

    constants: Mapping[float, float]
    horizon: int
    replications: int
    seed: int
    null_grid: tuple[float, ...]
    penalty: str = BOUNDARY_PENALTY
    schema_version: int = BOUNDARY_SCHEMA_VERSION

    def __post_init__(self) -> None:
        if not self.constants:
            raise BoundaryConfigError("boundary table is empty")
        if self.penalty != BOUNDARY_PENALTY:
            raise BoundaryConfigError(f"unknown penalty form: {self.penalty!r}")

    def constant_for(self, alpha: float) -> float:
        eligible = [a for a in self.constants if a <= alpha + 1e-12]
        if not eligible:
            raise BoundaryConfigError(
                f"alpha {alpha} is below the calibrated table (smallest "
                f"calibrated alpha is {min(self.constants)}); recalibrate"
            )
        return self.constants[max(eligible)]

    def threshold(self, d: int, alpha: float) -> float:
        if d < 1:
            raise ComparisonError(f"discordant count must be >= 1, got {d}")
        return self.constant_for(alpha) + 0.5 * math.log1p(math.log(d))

    def to_record(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "penalty": self.penalty,
            "horizon": self.horizon,
            "replications": self.replications,
            "seed": self.seed,
            "null_grid": list(self.null_grid),
            "constants": {repr(a): c for a, c in sorted(self.constants.items())},
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "SequentialBoundary":
        return cls(
            constants={float(a): float(c) for a, c in record["constants"].items()},
            horizon=int(record["horizon"]),
            replications=int(record["replications"]),
            seed=int(record["seed"]),
            null_grid=tuple(record["null_grid"]),
            penalty=record.get("penalty", BOUNDARY_PENALTY),
            schema_version=int(record.get("schema_version", BOUNDARY_SCHEMA_VERSION)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "SequentialBoundary":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def load_default_boundary() -> SequentialBoundary:
    """The frozen boundary shipped with the package."""
    text = resources.files("evalkit").joinpath("boundary_config.json").read_text("utf-8")
    return SequentialBoundary.from_record(json.loads(text))


@dataclass(frozen=True)
class TestDecision:
    """Outcome of one pairwise test."""

    verdict: str
    stopped_at: int
    alpha_used: float
    statistic: float | None = None
    p_value: float | None = None
    details: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.verdict not in (A_BETTER, B_BETTER, NOT_SEPARATED):
            raise ComparisonError(f"unknown verdict: {self.verdict!r}")

    @property
    def separated(self) -> bool:
        return self.verdict != NOT_SEPARATED

    def flipped(self) -> "TestDecision":
        """The same decision with the A/B labels swapped.

        The Welch statistic is signed (its decisions carry a p_value), so it
        negates; the sequential GLR statistic is direction-free and does not.
        """
        verdict = {A_BETTER: B_BETTER, B_BETTER: A_BETTER}.get(self.verdict, self.verdict)
        statistic = self.statistic
        if statistic is not None and self.p_value is not None:
            statistic = -statistic
        return TestDecision(
            verdict=verdict,
            stopped_at=self.stopped_at,
            alpha_used=self.alpha_used,
            statistic=statistic,
            p_value=self.p_value,
            details=dict(self.details),
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "stopped_at": self.stopped_at,
            "alpha_used": self.alpha_used,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "details": dict(self.details),
        }


def _check_pair(pair: Sequence[int]) -> tuple[int, int]:
    a, b = pair
    if a not in (0, 1, False, True) or b not in (0, 1, False, True):
        raise ComparisonError(f"paired outcomes must be 0/1, got {pair!r}")
    return int(a), int(b)


def sequential_paired_test(
    seq: Sequence[Sequence[int]],
    alpha: float,
    boundary: SequentialBoundary | None = None,
) -> TestDecision:
    """Sequentially test paired binary outcomes until separation or data end.

    Pairs are consumed in order; concordant pairs are skipped. At each
    discordant pair the GLR statistic d*KL(s/d, 1/2) is checked against the
    boundary; crossing declares the direction of s/d and stops. stopped_at
    is the number of pairs consumed (== len(seq) when no decision).
    """
    if not 0.0 < alpha < 0.5:
        raise ComparisonError(f"alpha must be in (0, 0.5), got {alpha}")
    if len(seq) == 0:
        raise ComparisonError("empty sequence")
    if boundary is None:
        boundary = load_default_boundary()
    constant = boundary.constant_for(alpha)
    d = 0
    s = 0
    statistic = 0.0
    for index, pair in enumerate(seq, start=1):
        a, b = _check_pair(pair)
        if a == b:
            continue
        d += 1
        s += a
        statistic = d * bernoulli_kl_vs_half(s / d)
        if statistic >= constant + 0.5 * math.log1p(math.log(d)):
            return TestDecision(
                verdict=A_BETTER if s * 2 > d else B_BETTER,
                stopped_at=index,
                alpha_used=alpha,
                statistic=statistic,
                details={
                    "discordant": d,
                    "wins_a": s,
                    "boundary_constant": constant,
                    "decided": True,
                },
            )
    return TestDecision(
        verdict=NOT_SEPARATED,
        stopped_at=len(seq),
        alpha_used=alpha,
        statistic=statistic,
        details={"discordant": d, "wins_a": s, "boundary_constant": constant, "decided": False},
    )


def welch_t_test(
    samples_a: Sequence[float],
    samples_b: Sequence[float],
    alpha: float,
) -> TestDecision:
    """Two-sided Welch's t-test on two independent samples.

    Degenerate inputs (both sample variances zero) cannot be tested: equal
    means give not_separated, different means are separated by convention;
    either way the decision is flagged degenerate.
    """
    if not 0.0 < alpha < 1.0:
        raise ComparisonError(f"alpha must be in (0, 1), got {alpha}")
    a = [float(x) for x in samples_a]
    b = [float(x) for x in samples_b]
    n_a, n_b = len(a), len(b)
    if n_a < 2 or n_b < 2:
        raise ComparisonError(f"need at least 2 samples per side, got {n_a} and {n_b}")
    mean_a = math.fsum(a) / n_a
    mean_b = math.fsum(b) / n_b
    var_a = math.fsum((x - mean_a) ** 2 for x in a) / (n_a - 1)
    var_b = math.fsum((x - mean_b) ** 2 for x in b) / (n_b - 1)
    consumed = n_a + n_b
    if var_a == 0.0 and var_b == 0.0:
        if mean_a == mean_b:
            verdict, p = NOT_SEPARATED, 1.0
        else:
            verdict, p = (A_BETTER if mean_a > mean_b else B_BETTER), 0.0
        return TestDecision(
            verdict=verdict,
            stopped_at=consumed,
            alpha_used=alpha,
            statistic=None,
            p_value=p,
            details={
                "degenerate": True,
                "mean_a": mean_a,
                "mean_b": mean_b,
                "n_a": n_a,
                "n_b": n_b,
            },
        )
    se_a = var_a / n_a
    se_b = var_b / n_b
    t = (mean_a - mean_b) / math.sqrt(se_a + se_b)
    # Welch-Satterthwaite in normalized weights (w_a + w_b = 1) so tiny
    # variances cannot underflow the ratio
    w_a = se_a / (se_a + se_b)
    w_b = se_b / (se_a + se_b)
    df = 1.0 / (w_a**2 / (n_a - 1) + w_b**2 / (n_b - 1))
    p = 2.0 * float(stats.t.sf(abs(t), df))
    if p < alpha:
        verdict = A_BETTER if t > 0 else B_BETTER
    else:
        verdict = NOT_SEPARATED
    return TestDecision(
        verdict=verdict,
        stopped_at=consumed,
        alpha_used=alpha,
        statistic=t,
        p_value=p,
        details={
            "degenerate": False,
            "df": df,
            "mean_a": mean_a,
            "mean_b": mean_b,
            "var_a": var_a,
            "var_b": var_b,
            "n_a": n_a,
            "n_b": n_b,
        },
    )


def bonferroni_alpha(global_alpha: float, k: int) -> float:
    """Per-test alpha for all k(k-1)/2 pairwise comparisons."""
    if not 0.0 < global_alpha < 1.0:
        raise ComparisonError(f"global alpha must be in (0, 1), got {global_alpha}")
    if k < 2:
        raise ComparisonError(f"need at least 2 policies, got {k}")
    return global_alpha / (k * (k - 1) // 2)


METRICS = ("binary_sequential", "tc_welch")


@dataclass(frozen=True)
class ComparisonMatrix:
    """Upper-triangular pairwise decisions over an ordered policy list.

    decisions is keyed by (i, j) index pairs with i < j; the (j, i) reading
    is the flipped decision.
    """

    policies: tuple[str, ...]
    metric: str
    global_alpha: float
    per_test_alpha: float
    decisions: Mapping[tuple[int, int], TestDecision]

    def __post_init__(self) -> None:
        k = len(self.policies)
        expected = {(i, j) for i in range(k) for j in range(i + 1, k)}
        if set(self.decisions) != expected:
            raise ComparisonError(
                f"decision matrix must cover exactly the {len(expected)} "
                f"upper-triangular pairs"
            )

    @property
    def k(self) -> int:
        return len(self.policies)

    def _index(self, policy: str) -> int:
        try:
            return self.policies.index(policy)
        except ValueError:
            raise ComparisonError(f"unknown policy: {policy}") from None

    def decision(self, policy_a: str, policy_b: str) -> TestDecision:
        i, j = self._index(policy_a), self._index(policy_b)
        if i == j:
            raise ComparisonError(f"policy compared with itself: {policy_a}")
        if i < j:
            return self.decisions[(i, j)]
        return self.decisions[(j, i)].flipped()

    def separated(self, policy_a: str, policy_b: str) -> bool:
        return self.decision(policy_a, policy_b).separated

    def to_record(self) -> dict[str, Any]:
        pairs = [
            {
                "policy_a": self.policies[i],
                "policy_b": self.policies[j],
                **self.decisions[(i, j)].to_record(),
            }
            for (i, j) in sorted(self.decisions)
        ]
        return {
            "policies": list(self.policies),
            "metric": self.metric,
            "global_alpha": self.global_alpha,
            "per_test_alpha": self.per_test_alpha,
            "pairs": pairs,
        }


def compare_all(
    policies: Sequence[str],
    data: Mapping[Any, Any],
    metric: str,
    global_alpha: float = 0.05,
    per_test_alpha: float | None = None,
    boundary: SequentialBoundary | None = None,
) -> ComparisonMatrix:
    """Run all k(k-1)/2 pairwise tests at the Bonferroni-adjusted alpha.

    For metric "binary_sequential", data maps (policy_a, policy_b) tuples to
    paired 0/1 sequences (either orientation of a pair is accepted; the
    reversed orientation is flipped). For metric "tc_welch", data maps each
    policy to its task-completion samples. per_test_alpha overrides the
    Bonferroni adjustment when the caller already controlled multiplicity.
    """
    policies = tuple(policies)
    if len(set(policies)) != len(policies):
        raise ComparisonError("duplicate policy ids")
    if metric not in METRICS:
        raise ComparisonError(f"unknown metric: {metric!r}")
    alpha = bonferroni_alpha(global_alpha, len(policies)) if per_test_alpha is None else per_test_alpha
    if alpha > global_alpha:
        raise ComparisonError(
            f"per-test alpha {alpha} exceeds global alpha {global_alpha}"
        )
    decisions: dict[tuple[int, int], TestDecision] = {}
    for i in range(len(policies)):
        for j in range(i + 1, len(policies)):
            pa, pb = policies[i], policies[j]
            if metric == "binary_sequential":
                if (pa, pb) in data:
                    seq = data[(pa, pb)]
                    decision = sequential_paired_test(seq, alpha, boundary)
                elif (pb, pa) in data:
                    seq = data[(pb, pa)]
                    decision = sequential_paired_test(seq, alpha, boundary).flipped()
                else:
                    raise ComparisonError(f"missing pair data for ({pa}, {pb})")
            else:
                if pa not in data or pb not in data:
                    missing = pa if pa not in data else pb
                    raise ComparisonError(f"missing sample data for {missing}")
                decision = welch_t_test(data[pa], data[pb], alpha)
            decisions[(i, j)] = decision
    return ComparisonMatrix(
        policies=policies,
        metric=metric,
        global_alpha=global_alpha,
        per_test_alpha=alpha,
        decisions=decisions,
    )


def _letter(index: int) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    if index < len(alphabet):
        return alphabet[index]
    return alphabet[index // len(alphabet) - 1] + alphabet[index % len(alphabet)]


@dataclass(frozen=True)
class CldAssignment:
    """Compact letter display: policies sharing a letter are not separated."""

    policies: tuple[str, ...]
    letters: tuple[str, ...]
    columns: tuple[tuple[str, ...], ...]

    def letters_for(self, policy: str) -> str:
        try:
            return self.letters[self.policies.index(policy)]
        except ValueError:
            raise ComparisonError(f"unknown policy: {policy}") from None

    def shares_letter(self, policy_a: str, policy_b: str) -> bool:
        return bool(set(self.letters_for(policy_a)) & set(self.letters_for(policy_b)))

    def to_record(self) -> dict[str, Any]:
        return {
            "policies": list(self.policies),
            "letters": list(self.letters),
            "columns": [list(c) for c in self.columns],
        }


def cld_letters(matrix: ComparisonMatrix) -> CldAssignment:
    """Assign compact-display letters by insert-and-absorb.

    Start from one letter column holding every policy. For each separated
    pair, split every column containing both members into two children (one
    without each member), keeping creation order, then absorb columns that
    are subsets of others (duplicates keep the earliest). Letters follow
    surviving column order: a, b, c, ...
    """
    k = matrix.k
    columns: list[set[int]] = [set(range(k))]
    for (i, j) in sorted(matrix.decisions):
        if not matrix.decisions[(i, j)].separated:
            continue
        split: list[set[int]] = []
        for col in columns:
            if i in col and j in col:
                split.append(col - {j})
                split.append(col - {i})
            else:
                split.append(col)
        columns = _absorb(split)
    letters = ["" for _ in range(k)]
    for index, col in enumerate(columns):
        mark = _letter(index)
        for member in sorted(col):
            letters[member] += mark
    return CldAssignment(
        policies=matrix.policies,
        letters=tuple("".join(sorted(ls)) for ls in letters),
        columns=tuple(tuple(matrix.policies[m] for m in sorted(col)) for col in columns),
    )


def _absorb(columns: list[set[int]]) -> list[set[int]]:
    kept: list[set[int]] = []
    for idx, col in enumerate(columns):
        absorbed = False
        for jdx, other in enumerate(columns):
            if idx == jdx:
                continue
            if col < other or (col == other and jdx < idx):
                absorbed = True
                break
        if not absorbed:
            kept.append(col)
    return kept
