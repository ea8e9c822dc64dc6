"""Synthetic outcomes and Monte Carlo calibration of the sequential boundary.

The calibration trick: for one simulated null replication, the sequential
test with boundary constant c rejects somewhere within the horizon iff
max_d [ d*KL(s_d/d, 1/2) - 0.5*ln(1+ln d) ] >= c. Computing that per-
replication max statistic M once therefore calibrates every alpha in one
pass: the constant for alpha is the smallest c with #{M >= c} <= alpha*R,
read off M's order statistics. Constants are computed per null p and the
max over the p grid is kept, so the guarantee holds across the grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import xlogy

from .comparison import A_BETTER, B_BETTER, SequentialBoundary, sequential_paired_test

NULL_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)

# One Monte Carlo pass calibrates all of these: the global alpha, common
# stricter levels, and the Bonferroni per-test alphas for k = 3..6 policies.
DEFAULT_ALPHA_GRID = (
    0.5,
    0.25,
    0.1,
    0.05,
    0.05 / 2,
    0.05 / 3,
    0.01,
    0.05 / 6,
    0.05 / 10,
    0.05 / 15,
    0.002,
    0.001,
)

POWER_EFFECTS = ((0.5, 0.7), (0.5, 0.8))


class SynthError(ValueError):
    pass


class CalibrationError(SynthError):
    pass


def _rng(seed: Any) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SyntheticPolicy:
    """Ground-truth policy for oracle experiments: either a Bernoulli
    success probability or a probability vector over the TC lattice."""

    true_p: float | None = None
    tc_distribution: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.true_p is None) == (self.tc_distribution is None):
            raise SynthError("set exactly one of true_p or tc_distribution")
        if self.true_p is not None and not 0.0 <= self.true_p <= 1.0:
            raise SynthError(f"true_p must be in [0, 1], got {self.true_p}")
        if self.tc_distribution is not None:
            vec = self.tc_distribution
            if len(vec) < 2 or any(p < 0 for p in vec):
                raise SynthError("tc_distribution needs >= 2 nonnegative entries")
            if abs(math.fsum(vec) - 1.0) > 1e-12:
                raise SynthError(f"tc_distribution sums to {math.fsum(vec)}, not 1")

    def sample_outcomes(self, n: int) -> list[int]:
        if self.true_p is None:
            raise SynthError("not a binary-outcome policy")
        rng = _rng(self.seed)
        return [int(x) for x in rng.random(n) < self.true_p]

    def sample_tc(self, n: int) -> list[float]:
        """Draw TC values on the lattice {0, 1/m, ..., 1} implied by the vector."""
        if self.tc_distribution is None:
            raise SynthError("not a TC-distribution policy")
        m = len(self.tc_distribution) - 1
        rng = _rng(self.seed)
        idx = rng.choice(m + 1, size=n, p=self.tc_distribution)
        return [i / m for i in idx]


def gen_paired_outcomes(
    p_a: float,
    p_b: float,
    n: int,
    correlation: float = 0.0,
    seed: Any = 0,
) -> list[tuple[int, int]]:
    """Paired Bernoulli outcomes sharing initial-condition difficulty.

    With probability `correlation` a pair shares one latent uniform (an easy
    or hard IC affects both policies alike); otherwise the latents are
    independent. Marginals are exactly Bernoulli(p_a) and Bernoulli(p_b).
    """
    for name, p in (("p_a", p_a), ("p_b", p_b)):
        if not 0.0 <= p <= 1.0:
            raise SynthError(f"{name} must be in [0, 1], got {p}")
    if not 0.0 <= correlation <= 1.0:
        raise SynthError(f"correlation must be in [0, 1], got {correlation}")
    if n < 1:
        raise SynthError(f"n must be >= 1, got {n}")
    rng = _rng(seed)
    shared = rng.random(n)
    own_a = rng.random(n)
    own_b = rng.random(n)
    coupled = rng.random(n) < correlation
    u_a = np.where(coupled, shared, own_a)
    u_b = np.where(coupled, shared, own_b)
    a = u_a < p_a
    b = u_b < p_b
    return [(int(x), int(y)) for x, y in zip(a, b)]


def _max_boundary_statistics(
    p: float, horizon: int, replications: int, seed: int, p_index: int
) -> np.ndarray:
    """Per-replication max of the penalized GLR statistic under the null.

    Both policies are Bernoulli(p) with independent latents: independence
    maximizes the discordant-pair count, making it the least favorable
    coupling for Type-I calibration.
    """
    out = np.empty(replications)
    chunk = max(1, 4_000_000 // max(horizon, 1))
    done = 0
    block = 0
    log2 = math.log(2.0)
    while done < replications:
        size = min(chunk, replications - done)
        rng = _rng([seed, p_index, block])
        a = rng.random((size, horizon)) < p
        b = rng.random((size, horizon)) < p
        discordant = a ^ b
        d = np.cumsum(discordant, axis=1)
        s = np.cumsum(a & ~b, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, s / np.maximum(d, 1), 0.5)
            kl = log2 + xlogy(q, q) + xlogy(1.0 - q, 1.0 - q)
            penalty = 0.5 * np.log1p(np.log(np.maximum(d, 1)))
            stat = np.where(d > 0, d * kl - penalty, -np.inf)
        out[done : done + size] = stat.max(axis=1)
        done += size
        block += 1
    return out


def _smallest_constant(sorted_desc: np.ndarray, alpha: float, replications: int) -> float:
    """Smallest c with #{M >= c} <= floor(alpha * R), from order statistics."""
    tail = int(math.floor(alpha * replications))
    if tail < 1:
        raise CalibrationError(
            f"replications={replications} too few to calibrate alpha={alpha} "
            f"(needs at least {math.ceil(1.0 / alpha)})"
        )
    if tail >= len(sorted_desc):
        return float(sorted_desc[-1])
    return float(np.nextafter(sorted_desc[tail], np.inf))


@dataclass(frozen=True)
class CalibrationReport:
    """Frozen record of one boundary calibration run."""

    alpha: float
    horizon: int
    replications: int
    seed: int
    null_grid: tuple[float, ...]
    boundary_constant: float
    alpha_table: Mapping[float, float]
    empirical_type1: Mapping[float, float]
    empirical_power: Mapping[str, float]
    schema_version: int = 1

    def __post_init__(self) -> None:
        rates = list(self.empirical_type1.values()) + list(self.empirical_power.values())
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise CalibrationError("rates must lie in [0, 1]")

    def to_boundary(self) -> SequentialBoundary:
        return SequentialBoundary(
            constants=dict(self.alpha_table),
            horizon=self.horizon,
            replications=self.replications,
            seed=self.seed,
            null_grid=self.null_grid,
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "alpha": self.alpha,
            "horizon": self.horizon,
            "replications": self.replications,
            "seed": self.seed,
            "null_grid": list(self.null_grid),
            "boundary_constant": self.boundary_constant,
            "alpha_table": {repr(a): c for a, c in sorted(self.alpha_table.items())},
            "empirical_type1": {repr(p): r for p, r in sorted(self.empirical_type1.items())},
            "empirical_power": dict(self.empirical_power),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def calibrate_sequential_boundary(
    alpha: float = 0.05,
    horizon: int = 200,
    replications: int = 10000,
    seed: int = 0,
    null_grid: Sequence[float] = NULL_GRID,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    power_effects: Sequence[tuple[float, float]] = POWER_EFFECTS,
) -> CalibrationReport:
    """Calibrate the sequential boundary constant by Monte Carlo.

    Finds the smallest constant whose empirical Type-I error is at most
    alpha at every null p in the grid, at the given horizon. The same pass
    also prices every alpha in alpha_grid (for the shipped config) and
    estimates power at the requested alpha for the given effect pairs.
    Bit-exact reproducible for fixed (seed, grid, replications).
    """
    if replications < 1:
        raise CalibrationError(f"replications must be >= 1, got {replications}")
    if horizon < 1:
        raise CalibrationError(f"horizon must be >= 1, got {horizon}")
    if not 0.0 < alpha < 1.0:
        raise CalibrationError(f"alpha must be in (0, 1), got {alpha}")
    alphas = sorted({float(alpha)} | {float(a) for a in alpha_grid}, reverse=True)
    grid = tuple(float(p) for p in null_grid)
    if not grid:
        raise CalibrationError("null grid is empty")

    max_stats: dict[float, np.ndarray] = {}
    for p_index, p in enumerate(grid):
        max_stats[p] = np.sort(
            _max_boundary_statistics(p, horizon, replications, seed, p_index)
        )[::-1]

    alpha_table: dict[float, float] = {}
    for a in alphas:
        alpha_table[a] = max(
            _smallest_constant(max_stats[p], a, replications) for p in grid
        )

    constant = alpha_table[float(alpha)]
    empirical_type1 = {
        p: float(np.count_nonzero(stats_p >= constant)) / replications
        for p, stats_p in max_stats.items()
    }

    boundary = SequentialBoundary(
        constants={float(alpha): constant},
        horizon=horizon,
        replications=replications,
        seed=seed,
        null_grid=grid,
    )
    empirical_power: dict[str, float] = {}
    for effect_index, (p_a, p_b) in enumerate(power_effects):
        empirical_power[f"{p_a}_vs_{p_b}"] = _vectorized_power(
            p_a, p_b, horizon, replications, [seed, 1000 + effect_index], constant
        )

    return CalibrationReport(
        alpha=float(alpha),
        horizon=horizon,
        replications=replications,
        seed=seed,
        null_grid=grid,
        boundary_constant=constant,
        alpha_table=alpha_table,
        empirical_type1=empirical_type1,
        empirical_power=empirical_power,
    )


def _vectorized_power(
    p_a: float,
    p_b: float,
    horizon: int,
    replications: int,
    seed: Any,
    constant: float,
) -> float:
    """Fraction of replications whose first boundary crossing has the correct
    direction (ties between equal true p count any crossing)."""
    correct = 0
    chunk = max(1, 4_000_000 // max(horizon, 1))
    done = 0
    block = 0
    log2 = math.log(2.0)
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    while done < replications:
        size = min(chunk, replications - done)
        rng = _rng(base + [block])
        a = rng.random((size, horizon)) < p_a
        b = rng.random((size, horizon)) < p_b
        discordant = a ^ b
        d = np.cumsum(discordant, axis=1)
        s = np.cumsum(a & ~b, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, s / np.maximum(d, 1), 0.5)
            kl = log2 + xlogy(q, q) + xlogy(1.0 - q, 1.0 - q)
            penalty = 0.5 * np.log1p(np.log(np.maximum(d, 1)))
            stat = np.where(d > 0, d * kl - penalty, -np.inf)
        crossed = stat >= constant
        any_cross = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        rows = np.arange(size)
        a_leads = 2 * s[rows, first] > d[rows, first]
        if p_a > p_b:
            good = any_cross & a_leads
        elif p_a < p_b:
            good = any_cross & ~a_leads
        else:
            good = any_cross
        correct += int(np.count_nonzero(good))
        done += size
        block += 1
    return correct / replications


def estimate_power(
    p_a: float,
    p_b: float,
    n: int,
    alpha: float,
    replications: int = 2000,
    seed: int = 0,
    correlation: float = 0.0,
    boundary: SequentialBoundary | None = None,
) -> float:
    """Power of the sequential test: fraction of replications declaring the
    correct direction within n pairs.

    Runs the actual scalar test per replication (no vectorized shortcut), so
    it doubles as an independent check on the calibration path. For
    p_a == p_b the returned rate is the false-separation rate instead.
    """
    if replications < 1:
        raise SynthError(f"replications must be >= 1, got {replications}")
    if p_a > p_b:
        want = A_BETTER
    elif p_a < p_b:
        want = B_BETTER
    else:
        want = None
    hits = 0
    for rep in range(replications):
        seq = gen_paired_outcomes(p_a, p_b, n, correlation, seed=[seed, rep])
        decision = sequential_paired_test(seq, alpha, boundary)
        if want is None:
            hits += int(decision.separated)
        else:
            hits += int(decision.verdict == want)
    return hits / replications
