"""Demonstration-data preprocessing: percentile normalization, motion filter.

Actions normalize per (feature dimension, timestep) cell to the 2nd/98th
percentile span, clipped to [-1.5, 1.5]; the 6D-rotation block is exempt and
passes through untouched. Demonstrations that idle at the start lose their
prefix up to the first frame where either gripper has moved more than 5 cm
or rotated more than 15 degrees away from its starting pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

TABLE_SCHEMA_VERSION = 1
DEMO_SCHEMA_VERSION = 1

POSE_SIZE = 9  # x, y, z, then the 6D rotation block

CLIP = 1.5
TRANS_THRESH_M = 0.05
ROT_THRESH_DEG = 15.0


class DataToolsError(ValueError):
    pass


class UnknownCellError(DataToolsError):
    pass


class ConstantCellError(DataToolsError):
    pass


class UnknownSourceError(DataToolsError):
    pass


class MalformedRotationError(DataToolsError):
    pass


def rot6d_to_matrix(r6: Sequence[float]) -> np.ndarray:
    """Orthonormalize a 6D rotation representation into a 3x3 matrix.

    Gram-Schmidt on the two stored columns; the third is their cross
    product. Degenerate inputs (zero or collinear columns) cannot define a
    rotation and raise.
    """
    v = np.asarray(r6, dtype=float)
    if v.shape != (6,):
        raise MalformedRotationError(f"expected 6 rotation values, got shape {v.shape}")
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-9:
        raise MalformedRotationError("first rotation column is numerically zero")
    b1 = a1 / n1
    a2p = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 < 1e-9:
        raise MalformedRotationError("rotation columns are collinear")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def geodesic_angle_deg(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    cos = (float(np.trace(rot_a.T @ rot_b)) - 1.0) / 2.0
    return math.degrees(math.acos(max(-1.0, min(1.0, cos))))


@dataclass(frozen=True)
class Frame:
    """One demonstration timestep: both end-effector poses plus grippers.

    Each pose is 9 floats: position xyz then the 6D rotation block.
    """

    t: float
    left: tuple[float, ...]
    right: tuple[float, ...]
    grippers: tuple[float, float]

    def __post_init__(self) -> None:
        if len(self.left) != POSE_SIZE or len(self.right) != POSE_SIZE:
            raise DataToolsError(f"poses must have {POSE_SIZE} values")

    def position(self, side: str) -> np.ndarray:
        pose = self.left if side == "left" else self.right
        return np.asarray(pose[:3], dtype=float)

    def rotation(self, side: str) -> np.ndarray:
        pose = self.left if side == "left" else self.right
        return rot6d_to_matrix(pose[3:])

    def to_wire(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "left": list(self.left),
            "right": list(self.right),
            "grippers": list(self.grippers),
        }

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "Frame":
        return cls(
            t=float(wire["t"]),
            left=tuple(float(x) for x in wire["left"]),
            right=tuple(float(x) for x in wire["right"]),
            grippers=tuple(float(x) for x in wire["grippers"]),  # type: ignore[arg-type]
        )


@dataclass(frozen=True)
class DemoTrajectory:
    demo_id: str
    source: str
    frames: tuple[Frame, ...]

    def __post_init__(self) -> None:
        times = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataToolsError(f"{self.demo_id}: timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.frames)

    def to_wire(self) -> dict[str, Any]:
        return {
            "schema_version": DEMO_SCHEMA_VERSION,
            "demo_id": self.demo_id,
            "source": self.source,
            "frames": [f.to_wire() for f in self.frames],
        }

    @classmethod
    def from_wire(cls, wire: Mapping[str, Any]) -> "DemoTrajectory":
        return cls(
            demo_id=wire["demo_id"],
            source=wire["source"],
            frames=tuple(Frame.from_wire(f) for f in wire["frames"]),
        )


def load_demos(path: str | Path) -> list[DemoTrajectory]:
    demos = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                demos.append(DemoTrajectory.from_wire(json.loads(line)))
    return demos


def write_demos(demos: Iterable[DemoTrajectory], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for demo in demos:
            fh.write(json.dumps(demo.to_wire(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class FilterResult:
    trajectory: DemoTrajectory
    first_motion_index: int | None
    never_moved: bool

    @property
    def removed_frames(self) -> int:
        return 0 if self.first_motion_index is None else self.first_motion_index


def filter_low_motion(
    demo: DemoTrajectory,
    trans_thresh: float = TRANS_THRESH_M,
    rot_thresh_deg: float = ROT_THRESH_DEG,
) -> FilterResult:
    """Drop the idle prefix of a demonstration.

    Frames before the first frame where EITHER gripper differs from its
    frame-0 pose by more than trans_thresh meters of translation or
    rot_thresh_deg degrees of geodesic rotation are removed. A demo that
    never crosses either threshold comes back unchanged, flagged never_moved.
    """
    if not demo.frames:
        raise DataToolsError(f"{demo.demo_id}: empty demo")
    ref = {side: (demo.frames[0].position(side), demo.frames[0].rotation(side)) for side in ("left", "right")}
    for index, frame in enumerate(demo.frames):
        for side in ("left", "right"):
            pos0, rot0 = ref[side]
            if float(np.linalg.norm(frame.position(side) - pos0)) > trans_thresh:
                break
            if geodesic_angle_deg(rot0, frame.rotation(side)) > rot_thresh_deg:
                break
        else:
            continue
        trimmed = DemoTrajectory(
            demo_id=demo.demo_id, source=demo.source, frames=demo.frames[index:]
        )
        return FilterResult(trajectory=trimmed, first_motion_index=index, never_moved=False)
    return FilterResult(trajectory=demo, first_motion_index=None, never_moved=True)


@dataclass(frozen=True)
class Normalizer:
    """Per-cell percentile spans for one data source.

    p02/p98 are (n_dims, n_timesteps) arrays; exempt dims (the 6D rotation
    block) have no parameters and pass through unchanged.
    """

    source_id: str
    p02: np.ndarray
    p98: np.ndarray
    exempt_dims: frozenset[int]

    def __post_init__(self) -> None:
        if self.p02.shape != self.p98.shape or self.p02.ndim != 2:
            raise DataToolsError("p02/p98 must be matching 2-d arrays")
        for dim in range(self.p02.shape[0]):
            if dim in self.exempt_dims:
                continue
            for t in range(self.p02.shape[1]):
                if not self.p98[dim, t] > self.p02[dim, t]:
                    raise ConstantCellError(
                        f"cell (dim={dim}, t={t}) has p98 <= p02 "
                        f"({self.p98[dim, t]} <= {self.p02[dim, t]})"
                    )

    @property
    def shape(self) -> tuple[int, int]:
        return self.p02.shape  # type: ignore[return-value]

    def _check_cell(self, cell: tuple[int, int]) -> tuple[int, int]:
        dim, t = cell
        n_dims, n_steps = self.shape
        if not (0 <= dim < n_dims and 0 <= t < n_steps):
            raise UnknownCellError(f"cell (dim={dim}, t={t}) outside {self.shape}")
        return dim, t

    def normalize(self, x: float, cell: tuple[int, int]) -> float:
        """The clipped affine map y = clip(2(x - p02)/(p98 - p02) - 1)."""
        dim, t = self._check_cell(cell)
        if dim in self.exempt_dims:
            return x
        lo, hi = self.p02[dim, t], self.p98[dim, t]
        y = 2.0 * (x - lo) / (hi - lo) - 1.0
        return min(max(-CLIP, y), CLIP)

    def denormalize(self, y: float, cell: tuple[int, int]) -> float:
        """Inverse affine map; exact round-trip inside the percentile span.

        Clipped values (|y| == 1.5) map to the clip-boundary preimage, which
        is lossy; is_lossy tells callers when that happened.
        """
        dim, t = self._check_cell(cell)
        if dim in self.exempt_dims:
            return y
        if not -CLIP <= y <= CLIP:
            raise DataToolsError(f"y={y} outside [-{CLIP}, {CLIP}]")
        lo, hi = self.p02[dim, t], self.p98[dim, t]
        return (y + 1.0) / 2.0 * (hi - lo) + lo

    @staticmethod
    def is_lossy(y: float) -> bool:
        return abs(y) >= CLIP

    def normalize_sample(self, sample: np.ndarray) -> np.ndarray:
        """Normalize a full (n_dims, n_timesteps) sample, exempt dims left
        bit-identical."""
        sample = np.asarray(sample, dtype=float)
        if sample.shape != self.shape:
            raise DataToolsError(f"sample shape {sample.shape} != table shape {self.shape}")
        out = sample.copy()
        live = [d for d in range(self.shape[0]) if d not in self.exempt_dims]
        if live:
            lo = self.p02[live, :]
            hi = self.p98[live, :]
            out[live, :] = np.clip(2.0 * (sample[live, :] - lo) / (hi - lo) - 1.0, -CLIP, CLIP)
        return out

    def to_rows(self) -> list[list[Any]]:
        rows = []
        for dim in range(self.shape[0]):
            if dim in self.exempt_dims:
                continue
            for t in range(self.shape[1]):
                rows.append([dim, t, float(self.p02[dim, t]), float(self.p98[dim, t])])
        return rows


def fit_normalizer(
    dataset: np.ndarray,
    exempt_dims: Iterable[int] = (),
    source_id: str = "default",
) -> Normalizer:
    """Fit per-cell 2nd/98th percentiles on (n_samples, n_dims, n_timesteps)
    data using linear-interpolation percentiles.

    Constant cells cannot span a normalization range and raise, naming the
    cell.
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 3:
        raise DataToolsError(f"dataset must be (samples, dims, timesteps), got {data.shape}")
    if data.shape[0] < 2:
        raise DataToolsError("need at least 2 samples per cell")
    exempt = frozenset(int(d) for d in exempt_dims)
    bad = [d for d in exempt if not 0 <= d < data.shape[1]]
    if bad:
        raise DataToolsError(f"exempt dims outside data: {sorted(bad)}")
    p02 = np.percentile(data, 2.0, axis=0)
    p98 = np.percentile(data, 98.0, axis=0)
    for dim in range(data.shape[1]):
        if dim in exempt:
            # Park harmless placeholder spans so the table stays rectangular.
            p02[dim, :] = 0.0
            p98[dim, :] = 1.0
            continue
        for t in range(data.shape[2]):
            if p02[dim, t] == p98[dim, t]:
                raise ConstantCellError(
                    f"cell (dim={dim}, t={t}): p02 == p98 == {p02[dim, t]}"
                )
    return Normalizer(source_id=source_id, p02=p02, p98=p98, exempt_dims=exempt)


class NormalizerRegistry:
    """Per-source normalizers, applied only under an explicit source match.

    Mixing one source's parameters into another source's data is the classic
    silent corruption here, so lookups are strict: asking for an unknown
    source raises instead of falling back.
    """

    def __init__(self) -> None:
        self._by_source: dict[str, Normalizer] = {}

    def add(self, normalizer: Normalizer) -> None:
        if normalizer.source_id in self._by_source:
            raise DataToolsError(f"source already registered: {normalizer.source_id}")
        self._by_source[normalizer.source_id] = normalizer

    def fit(self, source_id: str, dataset: np.ndarray, exempt_dims: Iterable[int] = ()) -> Normalizer:
        normalizer = fit_normalizer(dataset, exempt_dims, source_id=source_id)
        self.add(normalizer)
        return normalizer

    def sources(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_source))

    def for_source(self, source_id: str) -> Normalizer:
        try:
            return self._by_source[source_id]
        except KeyError:
            raise UnknownSourceError(
                f"no normalizer fitted for source {source_id!r}; refusing to "
                f"borrow another source's parameters (have: {self.sources()})"
            ) from None

    def normalize_demo_sample(self, source_id: str, sample: np.ndarray) -> np.ndarray:
        return self.for_source(source_id).normalize_sample(sample)

    def save(self, path: str | Path) -> None:
        doc = {
            "schema_version": TABLE_SCHEMA_VERSION,
            "normalizers": [
                {
                    "source_id": nz.source_id,
                    "n_dims": nz.shape[0],
                    "n_timesteps": nz.shape[1],
                    "exempt_dims": sorted(nz.exempt_dims),
                    "table": nz.to_rows(),
                }
                for _, nz in sorted(self._by_source.items())
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NormalizerRegistry":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        registry = cls()
        for item in doc["normalizers"]:
            p02 = np.zeros((item["n_dims"], item["n_timesteps"]))
            p98 = np.ones((item["n_dims"], item["n_timesteps"]))
            for dim, t, lo, hi in item["table"]:
                p02[dim, t] = lo
                p98[dim, t] = hi
            registry.add(
                Normalizer(
                    source_id=item["source_id"],
                    p02=p02,
                    p98=p98,
                    exempt_dims=frozenset(item["exempt_dims"]),
                )
            )
        return registry
