"""Labelled feature points: centroid extraction, pairing and CSV exchange."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateConfigurationError,
    EmptySegmentationError,
    InsufficientCorrespondenceError,
    InvalidArgumentError,
)
from .volume_io import LabelVolume

__all__ = [
    "WeightMode",
    "LabeledPointSet",
    "PairedPointSets",
    "centroids_from_labels",
    "pair_by_label",
    "read_centroids_csv",
    "write_centroids_csv",
    "BRAIN_EXCLUDED_LABELS",
]

# Cerebral white matter (2, 41) and outer CSF (24) in FreeSurfer numbering.
BRAIN_EXCLUDED_LABELS = frozenset({2, 41, 24})

_AFFINE_RANK_RTOL = 1e-6


class WeightMode(str, Enum):
    UNIFORM = "uniform"
    SIZE_PROPORTIONAL = "size_proportional"


def _normalized(w: NDArray[np.float64]) -> NDArray[np.float64]:
    total = w.sum()
    if not total > 0:
        raise InvalidArgumentError("weights must not all be zero")
    return w / total


@dataclass(frozen=True, eq=False)
class LabeledPointSet:
    """One point per label, in world millimetres, with normalised weights.

    ``sizes`` keeps the voxel count of each region when the set came from a
    label volume (used to re-derive size-proportional weights after pairing).
    """

    labels: NDArray[np.int64]
    points: NDArray[np.float64]
    weights: NDArray[np.float64]
    weight_mode: WeightMode = WeightMode.UNIFORM
    sizes: NDArray[np.float64] | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if points.ndim != 2 or points.shape[1] not in (2, 3):
            raise InvalidArgumentError(f"points must be (n, 2) or (n, 3), got {points.shape}")
        n = points.shape[0]
        if labels.shape != (n,) or weights.shape != (n,):
            raise InvalidArgumentError("labels, points and weights must have equal length")
        if len(np.unique(labels)) != n:
            raise InvalidArgumentError("labels must be unique within a point set")
        if not np.all(np.isfinite(points)):
            raise InvalidArgumentError("point coordinates must be finite")
        if np.any(weights < 0):
            raise InvalidArgumentError("weights must be nonnegative")
        if n and abs(weights.sum() - 1.0) > 1e-12:
            weights = _normalized(weights)
        for arr in (labels, points, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        if self.sizes is not None:
            object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=float))

    @classmethod
    def from_points(cls, labels: ArrayLike, points: ArrayLike, weights=None) -> LabeledPointSet:
        points = np.asarray(points, dtype=float)
        if weights is None:
            n = points.shape[0]
            return cls(labels, points, np.full(n, 1.0 / n), WeightMode.UNIFORM)
        return cls(labels, points, weights, WeightMode.SIZE_PROPORTIONAL)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class PairedPointSets:
    """Reference and moving sets restricted to common labels, aligned by index."""

    reference: LabeledPointSet
    moving: LabeledPointSet
    common_labels: NDArray[np.int64]

    @property
    def x(self) -> NDArray[np.float64]:
        return self.reference.points

    @property
    def y(self) -> NDArray[np.float64]:
        return self.moving.points

    @property
    def weights(self) -> NDArray[np.float64]:
        """Fitting weights; the reference set's weights by construction."""
        return self.reference.weights

    @property
    def dim(self) -> int:
        return self.reference.dim


def centroids_from_labels(
    volume: LabelVolume,
    exclude=(),
    weight_mode: WeightMode | str = WeightMode.UNIFORM,
) -> LabeledPointSet:
    """Centroid of every labelled region, in world coordinates.

    Each voxel centre ``(i, j, k)`` is mapped to world space through the
    volume affine and the mapped centres are averaged per label. Label 0 is
    always background. Sums run in a fixed (C) order over the raster, so the
    result is deterministic.
    """
    weight_mode = WeightMode(weight_mode)
    data = np.asarray(volume.data)
    if data.ndim != 3:
        raise InvalidArgumentError(f"label volume must be 3-D, got shape {data.shape}")
    flat = data.reshape(-1).astype(np.int64)
    counts = np.bincount(flat)
    present = np.nonzero(counts)[0]
    excluded = set(int(v) for v in exclude) | {0}
    keep = np.array([lab for lab in present if int(lab) not in excluded], dtype=np.int64)
    if keep.size == 0:
        raise EmptySegmentationError("no non-background, non-excluded labels in volume")

    idx_sums = np.stack(
        [
            np.bincount(flat, weights=np.broadcast_to(ax, data.shape).reshape(-1))
            for ax in np.ogrid[: data.shape[0], : data.shape[1], : data.shape[2]]
        ],
        axis=-1,
    )
    n_vox = counts[keep].astype(float)
    mean_idx = idx_sums[keep] / n_vox[:, None]
    # affine maps commute with averaging
    points = mean_idx @ volume.affine[:3, :3].T + volume.affine[:3, 3]
    if weight_mode is WeightMode.UNIFORM:
        weights = np.full(keep.size, 1.0 / keep.size)
    else:
        weights = n_vox / n_vox.sum()
    return LabeledPointSet(keep, points, weights, weight_mode, sizes=n_vox)


def check_affinely_independent(points: NDArray[np.float64], what: str = "points") -> None:
    """Raise unless ``points`` span their full dimension (``dim + 1`` independent)."""
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if n < d + 1:
        raise DegenerateConfigurationError(f"{what}: {n} points cannot span {d}-D space")
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[0] == 0.0 or s[d - 1] <= _AFFINE_RANK_RTOL * s[0]:
        raise DegenerateConfigurationError(
            f"{what}: fewer than {d + 1} affinely independent points "
            f"(singular values {np.array2string(s[:d], precision=3)})"
        )


def pair_by_label(
    ref: LabeledPointSet, mov: LabeledPointSet, weight_source: str = "reference"
) -> PairedPointSets:
    """Restrict both sets to their common labels (ascending) and align them.

    Weights are renormalised over the intersection. With size-proportional
    sets, ``weight_source`` picks whose region sizes drive the fitting weights:
    ``"reference"`` (default), ``"moving"`` or ``"average"``.
    """
    if ref.dim != mov.dim:
        raise InvalidArgumentError(f"dimension mismatch: {ref.dim} vs {mov.dim}")
    common = np.intersect1d(ref.labels, mov.labels)
    d = ref.dim
    if common.size < d + 1:
        raise InsufficientCorrespondenceError(
            f"{common.size} labels in common, at least {d + 1} required in {d}-D"
        )
    rpos = {int(lab): i for i, lab in enumerate(ref.labels)}
    mpos = {int(lab): i for i, lab in enumerate(mov.labels)}
    ri = np.array([rpos[int(lab)] for lab in common])
    mi = np.array([mpos[int(lab)] for lab in common])

    k = common.size
    w_ref = np.full(k, 1.0 / k) if ref.weight_mode is WeightMode.UNIFORM else _normalized(ref.weights[ri])
    w_mov = np.full(k, 1.0 / k) if mov.weight_mode is WeightMode.UNIFORM else _normalized(mov.weights[mi])
    if weight_source == "reference":
        w = w_ref
    elif weight_source == "moving":
        w = w_mov
    elif weight_source == "average":
        w = _normalized(0.5 * (w_ref + w_mov))
    else:
        raise InvalidArgumentError(f"unknown weight_source {weight_source!r}")

    x = ref.points[ri]
    check_affinely_independent(x, "reference points")
    rsizes = None if ref.sizes is None else ref.sizes[ri]
    msizes = None if mov.sizes is None else mov.sizes[mi]
    r = LabeledPointSet(common, x, w, ref.weight_mode, rsizes)
    m = LabeledPointSet(common, mov.points[mi], w_mov, mov.weight_mode, msizes)
    return PairedPointSets(r, m, common)


def write_centroids_csv(points: LabeledPointSet, path: str | Path) -> None:
    axes = ["x", "y", "z"][: points.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *axes, "weight"])
        for lab, p, wt in zip(points.labels, points.points, points.weights):
            w.writerow([int(lab), *(repr(float(v)) for v in p), repr(float(wt))])


def read_centroids_csv(path: str | Path) -> LabeledPointSet:
    """Read ``label,x,y[,z][,weight]``. Without a weight column weights are uniform."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        if fields[:3] != ["label", "x", "y"]:
            raise InvalidArgumentError(f"{path}: header must start with label,x,y")
        axes = ["x", "y", "z"] if "z" in fields else ["x", "y"]
        labels, pts, wts = [], [], []
        for row in reader:
            row = {k.strip(): v for k, v in row.items()}
            try:
                labels.append(int(row["label"]))
                pts.append([float(row[a]) for a in axes])
                if "weight" in fields:
                    wts.append(float(row["weight"]))
            except (TypeError, ValueError) as exc:
                raise InvalidArgumentError(f"{path}: malformed row {row}") from exc
    if not labels:
        raise EmptySegmentationError(f"{path}: no centroid rows")
    if wts:
        return LabeledPointSet(labels, pts, wts, WeightMode.SIZE_PROPORTIONAL)
    return LabeledPointSet.from_points(labels, pts)
