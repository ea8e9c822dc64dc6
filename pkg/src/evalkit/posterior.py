"""Posteriors over success rate and task completion, plus violin densities.

Success counts get a Beta(s+1, n-s+1) posterior (uniform prior). Mean task
completion gets a Dirichlet posterior over the lattice categories
{0, 1/m, ..., 1}, summarized by Monte Carlo draws of the implied mean. Both
export a DensityGrid whose trapezoid integral is 1, so downstream violin
rendering never has to renormalize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

GRID_POINTS = 512
INTEGRAL_TOL = 1e-6


class PosteriorError(ValueError):
    pass


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum((y[1:] + y[:-1]) * (x[1:] - x[:-1])) * 0.5)


@dataclass(frozen=True)
class DensityGrid:
    """A density sampled on an ascending support grid spanning [0, 1].

    mean_marker is the reference line a violin draws; its meaning depends on
    the builder (empirical rate for success-rate grids, posterior mean for
    Dirichlet-mean grids, sample mean for raw lattices) and is recorded in
    metadata["mean_marker_kind"].
    """

    support: tuple[float, ...]
    density: tuple[float, ...]
    kind: str
    mean_marker: float
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("analytic", "monte_carlo"):
            raise PosteriorError(f"unknown grid kind: {self.kind!r}")
        if len(self.support) != len(self.density) or len(self.support) < 2:
            raise PosteriorError("support and density must be equal length, at least 2")
        x = np.asarray(self.support, dtype=float)
        y = np.asarray(self.density, dtype=float)
        if not (x[0] >= -1e-12 and x[-1] <= 1 + 1e-12):
            raise PosteriorError("support must lie within [0, 1]")
        if np.any(np.diff(x) <= 0):
            raise PosteriorError("support must be strictly ascending")
        if np.any(y < 0):
            raise PosteriorError("density must be nonnegative")
        integral = _trapezoid(y, x)
        if abs(integral - 1.0) > INTEGRAL_TOL:
            raise PosteriorError(f"trapezoid integral {integral} is not 1 within {INTEGRAL_TOL}")
        if not 0 <= self.mean_marker <= 1:
            raise PosteriorError(f"mean_marker {self.mean_marker} outside [0, 1]")

    @property
    def integral(self) -> float:
        return _trapezoid(np.asarray(self.density), np.asarray(self.support))

    @property
    def grid_mean(self) -> float:
        x = np.asarray(self.support)
        return _trapezoid(x * np.asarray(self.density), x)

    def to_record(self) -> dict[str, Any]:
        return {
            "support": list(self.support),
            "density": list(self.density),
            "kind": self.kind,
            "mean_marker": self.mean_marker,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "DensityGrid":
        return cls(
            support=tuple(record["support"]),
            density=tuple(record["density"]),
            kind=record["kind"],
            mean_marker=record["mean_marker"],
            metadata=dict(record["metadata"]),
        )


def _freeze_grid(
    x: np.ndarray,
    y: np.ndarray,
    kind: str,
    mean_marker: float,
    metadata: dict[str, Any],
) -> DensityGrid:
    area = _trapezoid(y, x)
    if area <= 0:
        raise PosteriorError("density integrates to zero")
    return DensityGrid(
        support=tuple(float(v) for v in x),
        density=tuple(float(v) for v in y / area),
        kind=kind,
        mean_marker=float(mean_marker),
        metadata=metadata,
    )


def _adaptive_unit_grid(ppf: Callable[[np.ndarray], np.ndarray], points: int) -> np.ndarray:
    """Support grid on [0, 1] mixing uniform and quantile-spaced points.

    Uniform points keep the bulk covered; quantile points resolve the
    concentrated part of the distribution (a flat 512-point grid misses
    enough tail mass on sharp Betas to break the integral and mean checks).
    Largest gaps are midpoint-split until exactly `points` remain.
    """
    half = points // 2
    qs = np.linspace(0.0, 1.0, half + 2)[1:-1]
    quantile_pts = np.clip(np.asarray(ppf(qs), dtype=float), 0.0, 1.0)
    uniform = np.linspace(0.0, 1.0, half)
    grid = np.unique(np.concatenate([[0.0, 1.0], uniform, quantile_pts]))
    while len(grid) < points:
        gaps = np.diff(grid)
        need = points - len(grid)
        order = np.argsort(gaps)[::-1][:need]
        mids = (grid[order] + grid[order + 1]) / 2.0
        grid = np.unique(np.concatenate([grid, mids]))
    if len(grid) > points:  # pragma: no cover - construction caps at `points`
        grid = grid[np.linspace(0, len(grid) - 1, points).round().astype(int)]
    return grid


@dataclass(frozen=True)
class BetaPosterior:
    """Beta posterior for a success probability under a uniform prior."""

    successes: int
    trials: int
    caveat: str | None = None

    def __post_init__(self) -> None:
        if self.trials < 0 or not 0 <= self.successes <= max(self.trials, 0):
            raise PosteriorError(
                f"bad counts: {self.successes} successes in {self.trials} trials"
            )

    @property
    def alpha(self) -> float:
        return self.successes + 1.0

    @property
    def beta(self) -> float:
        return self.trials - self.successes + 1.0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        a, b = self.alpha, self.beta
        return a * b / ((a + b) ** 2 * (a + b + 1))

    @property
    def mode(self) -> float | None:
        """Posterior mode, undefined (None) for the flat zero-trial posterior."""
        if self.trials == 0:
            return None
        return self.successes / self.trials

    @property
    def empirical_rate(self) -> float | None:
        """Raw successes/trials. This is the violin's drawn mean line, which
        is why a never-succeeding cell shows 0 even though the posterior
        mean stays positive."""
        if self.trials == 0:
            return None
        return self.successes / self.trials

    def credible_interval(self, level: float = 0.95) -> tuple[float, float]:
        if not 0 < level < 1:
            raise PosteriorError(f"level must be in (0, 1), got {level}")
        tail = (1.0 - level) / 2.0
        dist = stats.beta(self.alpha, self.beta)
        return float(dist.ppf(tail)), float(dist.ppf(1.0 - tail))

    def density_grid(self, points: int = GRID_POINTS) -> DensityGrid:
        if points < 16:
            raise PosteriorError(f"grid needs at least 16 points, got {points}")
        dist = stats.beta(self.alpha, self.beta)
        x = _adaptive_unit_grid(dist.ppf, points)
        y = dist.pdf(x)
        lo, hi = self.credible_interval(0.95)
        marker = self.mean if self.empirical_rate is None else self.empirical_rate
        return _freeze_grid(
            x,
            y,
            kind="analytic",
            mean_marker=marker,
            metadata={
                "distribution": "beta",
                "alpha": self.alpha,
                "beta": self.beta,
                "successes": self.successes,
                "trials": self.trials,
                "posterior_mean": self.mean,
                "ci95": [lo, hi],
                "mean_marker_kind": "empirical_rate",
                "caveat": self.caveat,
            },
        )

    def to_record(self) -> dict[str, Any]:
        lo, hi = self.credible_interval(0.95)
        return {
            "successes": self.successes,
            "trials": self.trials,
            "alpha": self.alpha,
            "beta": self.beta,
            "posterior_mean": self.mean,
            "empirical_rate": self.empirical_rate,
            "ci95": [lo, hi],
            "caveat": self.caveat,
        }


def beta_posterior(successes: int, trials: int) -> BetaPosterior:
    """Posterior for s successes in n trials under the uniform prior."""
    if int(successes) != successes or int(trials) != trials:
        raise PosteriorError("counts must be integers")
    return BetaPosterior(successes=int(successes), trials=int(trials))


def aggregate_tasks(cells: Iterable[tuple[int, int] | BetaPosterior]) -> BetaPosterior:
    """Pool (successes, trials) across tasks into one posterior.

    Pooling treats trials from different tasks as exchangeable, which they
    are not; the result carries a caveat saying so.
    """
    s = n = 0
    count = 0
    for cell in cells:
        if isinstance(cell, BetaPosterior):
            s += cell.successes
            n += cell.trials
        else:
            cs, cn = cell
            if not 0 <= cs <= cn:
                raise PosteriorError(f"bad cell counts: ({cs}, {cn})")
            s += int(cs)
            n += int(cn)
        count += 1
    if count == 0:
        raise PosteriorError("nothing to aggregate")
    return BetaPosterior(
        successes=s,
        trials=n,
        caveat="pooled across tasks; treats per-task trials as exchangeable",
    )


def _lattice_counts(
    samples: Sequence[Any], milestone_count: int | None
) -> tuple[np.ndarray, int]:
    values: list[float] = []
    m = milestone_count
    for sample in samples:
        if hasattr(sample, "milestone_count"):
            sm = sample.milestone_count
            if m is None:
                m = sm
            elif sm != m:
                raise PosteriorError(f"mixed milestone counts: {m} and {sm}")
            values.append(sample.achieved_count / sm)
        else:
            values.append(float(sample))
    if m is None:
        raise PosteriorError("milestone_count required when samples are bare floats")
    if m < 1:
        raise PosteriorError(f"milestone_count must be positive, got {m}")
    counts = np.zeros(m + 1, dtype=np.int64)
    for v in values:
        idx = round(v * m)
        if not 0 <= idx <= m or abs(v * m - idx) > 1e-9:
            raise PosteriorError(f"sample {v} is off the 1/{m} lattice")
        counts[idx] += 1
    return counts, m


def dirichlet_mean_posterior(
    samples: Sequence[Any],
    milestone_count: int | None = None,
    draws: int = 20000,
    seed: int = 0,
    points: int = GRID_POINTS,
) -> DensityGrid:
    """Posterior density of the mean task completion for one cell.

    `samples` is a sequence of TaskCompletion (or floats on the lattice,
    with milestone_count given). Category weights get a Dirichlet(counts+1)
    posterior; `draws` Monte Carlo draws of the implied mean feed a KDE.
    The mean_marker is the exact posterior mean of the mean completion,
    sum(v_i * (c_i + 1)) / (n + m + 1), not the Monte Carlo estimate.
    """
    if draws < 1000:
        raise PosteriorError(f"draws must be at least 1000, got {draws}")
    counts, m = _lattice_counts(samples, milestone_count)
    if counts.sum() == 0:
        raise PosteriorError("no samples")
    values = np.arange(m + 1) / m
    concentration = counts + 1.0
    closed_form_mean = float(values @ concentration / concentration.sum())

    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(concentration, size=draws)
    means = weights @ values
    spread = float(np.ptp(means))
    if spread < 1e-12:  # pragma: no cover - needs astronomically peaked data
        raise PosteriorError("posterior mean draws are degenerate")
    kde = stats.gaussian_kde(means)
    x = _adaptive_unit_grid(lambda q: np.quantile(means, q), points)
    y = kde(x)
    return _freeze_grid(
        x,
        y,
        kind="monte_carlo",
        mean_marker=closed_form_mean,
        metadata={
            "distribution": "dirichlet_mean",
            "milestone_count": m,
            "counts": [int(c) for c in counts],
            "n": int(counts.sum()),
            "draws": draws,
            "seed": seed,
            "posterior_mean": closed_form_mean,
            "kde_bandwidth": float(kde.factor),
            "mean_marker_kind": "posterior_mean",
        },
    )


def raw_tc_distribution(
    samples: Sequence[Any], milestone_count: int | None = None
) -> DensityGrid:
    """Lattice histogram of raw task-completion values as a density.

    Each lattice point i/m becomes a triangular bump of half-width 1/(2m)
    with area equal to its sample share (edge bumps are half-triangles with
    doubled peaks), so the piecewise-linear density trapezoid-integrates to
    exactly 1. The mean_marker is the exact sample mean.
    """
    counts, m = _lattice_counts(samples, milestone_count)
    n = int(counts.sum())
    if n == 0:
        raise PosteriorError("no samples")
    shares = counts / n
    support = np.arange(2 * m + 1) / (2 * m)
    density = np.zeros(2 * m + 1)
    for i in range(m + 1):
        peak = 2.0 * m * shares[i]
        if i in (0, m):
            peak *= 2.0
        density[2 * i] = peak
    mean = Fraction(int(np.arange(m + 1) @ counts), n * m)
    return _freeze_grid(
        support,
        density,
        kind="analytic",
        mean_marker=float(mean),
        metadata={
            "distribution": "raw_lattice",
            "milestone_count": m,
            "counts": [int(c) for c in counts],
            "n": n,
            "sample_mean": float(mean),
            "mean_marker_kind": "sample_mean",
        },
    )
