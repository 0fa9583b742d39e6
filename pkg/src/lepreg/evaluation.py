"""Overlap scores, failure QC, affine comparison reports and synthetic phantoms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfigurationError, InvalidArgumentError
from .fusion import (
    DisplacementField,
    FusionParams,
    build_svf,
    compose_full,
    compose_inverse_full,
    integrate_svf,
    invert_svf,
)
from .grid import GridSpec
from .linalg import AffineDistances, AffineTransform, affine_distances
from .matching import LocalAffineSet
from .volume_io import LabelVolume, resample_labels

__all__ = [
    "DiceReport",
    "Phantom",
    "dice",
    "qc_flag",
    "affine_report",
    "report_text",
    "make_phantom",
    "QC_THRESHOLD",
    "PHANTOM_CAPS",
]

QC_THRESHOLD = 0.34

# Upper bounds at magnitude 1 for random affine truths.
PHANTOM_CAPS = {
    "rotation": 0.3,  # rad
    "log_scale": math.log(1.3),
    "shear": 0.2,
    "translation": 20.0,  # mm
}
# Local deviations of polyaffine truths, at magnitude 1.
LOCAL_CAPS = {
    "rotation": 0.15,
    "log_scale": math.log(1.15),
    "translation": 4.0,
}
# Polyaffine truths scale their background affine by this factor.
POLY_BACKGROUND_SCALE = 0.5
_MIN_REGION_VOXELS = 8
_MAX_ATTEMPTS = 10


@dataclass(frozen=True)
class DiceReport:
    per_label: dict[int, float]
    mean: float
    group_means: dict[str, float] | None = None

    def to_json(self) -> dict:
        doc = {
            "mean": self.mean,
            "per_label": {str(k): v for k, v in self.per_label.items()},
        }
        if self.group_means is not None:
            doc["group_means"] = self.group_means
        return doc

    def to_text(self) -> str:
        lines = [f"{'label':>8}  {'dice':>8}"]
        lines += [f"{lab:>8d}  {v:8.4f}" for lab, v in self.per_label.items()]
        if self.group_means:
            lines += [f"{name:>8}  {v:8.4f}" for name, v in self.group_means.items()]
        lines.append(f"{'mean':>8}  {self.mean:8.4f}")
        return "\n".join(lines)


def dice(
    a: LabelVolume,
    b: LabelVolume,
    labels=None,
    groups: dict[str, list[int]] | None = None,
) -> DiceReport:
    """Per-label Dice ``2|A∩B| / (|A|+|B|)`` between two label volumes.

    Labels absent from both volumes are left out; a label present in only one
    scores 0. Group means average the member labels' scores (regions are not
    merged).
    """
    da, db = np.asarray(a.data), np.asarray(b.data)
    if da.shape != db.shape or not np.allclose(a.affine, b.affine):
        raise InvalidArgumentError("dice requires volumes on identical grids")
    fa = da.reshape(-1).astype(np.int64)
    fb = db.reshape(-1).astype(np.int64)
    size = int(max(fa.max(initial=0), fb.max(initial=0))) + 1
    na = np.bincount(fa, minlength=size)
    nb = np.bincount(fb, minlength=size)
    inter = np.bincount(fa[fa == fb], minlength=size)
    if labels is None:
        candidates = np.nonzero((na + nb) > 0)[0]
        candidates = candidates[candidates != 0]
    else:
        candidates = np.array(sorted(int(v) for v in labels), dtype=np.int64)
    per_label: dict[int, float] = {}
    for lab in candidates:
        lab = int(lab)
        tot = (na[lab] + nb[lab]) if lab < size else 0
        if tot == 0:
            continue
        per_label[lab] = float(2.0 * inter[lab] / tot)
    mean = float(np.mean(list(per_label.values()))) if per_label else float("nan")
    group_means = None
    if groups is not None:
        group_means = {}
        for name, members in groups.items():
            vals = [per_label[m] for m in members if m in per_label]
            group_means[name] = float(np.mean(vals)) if vals else float("nan")
    return DiceReport(per_label, mean, group_means)


def load_groups(path) -> dict[str, list[int]]:
    """Read a ``{"group": [labels...]}`` JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    return {str(k): [int(v) for v in vals] for k, vals in doc.items()}


def qc_flag(report: DiceReport, threshold: float = QC_THRESHOLD) -> bool:
    """True when the mean Dice is strictly below ``threshold`` (likely failure)."""
    return bool(report.mean < threshold)


def affine_report(a: AffineTransform, b: AffineTransform) -> AffineDistances:
    return affine_distances(a, b)


def report_text(d: AffineDistances) -> str:
    return "\n".join(f"{name:<14}{value:12.6f}" for name, value in d._asdict().items())


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Phantom:
    """Reference/moving label pair with the transformation relating them.

    ``truth`` maps reference world coordinates to moving world coordinates
    (the same backward-mapping convention a registration estimates), so
    ``moving(truth(x)) ≈ reference(x)``.
    """

    reference: LabelVolume
    moving: LabelVolume
    truth: AffineTransform | DisplacementField
    seed: int
    truth_inverse: AffineTransform | DisplacementField | None = None
    sites: NDArray[np.float64] | None = field(default=None, repr=False)


def _random_affine(rng, magnitude: float, caps: dict, center) -> AffineTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, caps["rotation"] * magnitude)
    R = Rotation.from_rotvec(angle * axis).as_matrix()
    S = np.diag(np.exp(rng.uniform(-1, 1, size=3) * caps["log_scale"] * magnitude))
    H = np.eye(3)
    if "shear" in caps:
        H[np.triu_indices(3, 1)] = rng.uniform(-1, 1, size=3) * caps["shear"] * magnitude
    L = R @ S @ H
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0, caps["translation"] * magnitude)
    # act about the grid centre so the object stays roughly in place
    return AffineTransform(L, center - L @ center + t)


def _grid_box(grid: GridSpec) -> tuple[NDArray, NDArray, NDArray]:
    corners = np.array(
        [[i, j, k] for i in (0, grid.dims[0] - 1) for j in (0, grid.dims[1] - 1) for k in (0, grid.dims[2] - 1)],
        dtype=float,
    )
    w = grid.voxel_to_world_points(corners)
    margin = 2.0 * grid.spacing.max()
    return w.mean(axis=0), w.min(axis=0) + margin, w.max(axis=0) - margin


def _fitting_radius(A: AffineTransform, center, lo, hi, extra: float = 0.0, growth: float = 1.0) -> float:
    """Largest ball radius about ``center`` whose image under ``A`` stays in ``[lo, hi]``.

    ``extra`` and ``growth`` pad the image for local deformations on top of ``A``.
    """
    c2 = A(center)
    row_norms = np.linalg.norm(A.linear, axis=1) * growth
    room = np.minimum(hi - c2, c2 - lo) - extra
    inner = np.min(np.minimum(hi - center, center - lo))
    return float(min(0.8 * inner, np.min(room / row_norms)))


def _voronoi_labels(grid: GridSpec, center, radius, n_regions, rng):
    x = grid.world_coords()
    inside = np.sum((x - center) ** 2, axis=-1) <= radius**2
    min_sep = 0.6 * radius * (4.0 / (3.0 * n_regions)) ** (1 / 3)
    sites: list[NDArray] = []
    tries = 0
    while len(sites) < n_regions:
        tries += 1
        if tries > 200 * n_regions:
            raise DegenerateConfigurationError("could not place well-separated sites")
        p = rng.uniform(-1, 1, size=3)
        if p @ p > 1:
            continue
        p = center + 0.85 * radius * p
        if sites and np.min(np.linalg.norm(np.array(sites) - p, axis=1)) < min_sep:
            continue
        sites.append(p)
    sites_arr = np.array(sites)
    _, nearest = cKDTree(sites_arr).query(x[inside])
    data = np.zeros(grid.dims, dtype=np.int16)
    data[inside] = nearest + 1
    return data, sites_arr


def _random_local_affines(rng, sites, magnitude: float) -> LocalAffineSet:
    transforms = []
    for c in sites:
        transforms.append(_random_affine(rng, magnitude, LOCAL_CAPS, c))
    logs = tuple(t.log() for t in transforms)
    return LocalAffineSet(np.array(sites), tuple(transforms), logs)


def make_phantom(
    kind: str,
    n_regions: int,
    grid: GridSpec,
    magnitude: float = 1.0,
    seed: int = 0,
    params: FusionParams | None = None,
) -> Phantom:
    """Synthetic labelled ball and a known transformation of it.

    The reference is a ball, centred in ``grid``, split into the Voronoi cells
    of ``n_regions`` random sites. ``kind="affine"`` draws a random affine
    within :data:`PHANTOM_CAPS` scaled by ``magnitude``; ``kind="polyaffine"``
    draws a half-size background affine and one local affine per site, fused
    with ``params`` (default settings, no downsampling). The ball radius
    is the largest (up to 80% of the half field of view) whose image under
    the drawn affine stays inside the grid.
    """
    if kind not in ("affine", "polyaffine"):
        raise InvalidArgumentError(f"unknown phantom kind {kind!r}")
    if grid.dim != 3:
        raise InvalidArgumentError("phantoms are 3-D")
    if n_regions < 4:
        raise InvalidArgumentError("at least 4 regions are needed in 3-D")
    if magnitude < 0:
        raise InvalidArgumentError("magnitude must be >= 0")
    center, lo, hi = _grid_box(grid)
    rng = np.random.default_rng(seed)
    if kind == "affine":
        truth = _random_affine(rng, magnitude, PHANTOM_CAPS, center)
        radius = _fitting_radius(truth, center, lo, hi)
    else:
        background = _random_affine(rng, magnitude * POLY_BACKGROUND_SCALE, PHANTOM_CAPS, center)
        extra = 2 * LOCAL_CAPS["translation"] * magnitude
        growth = math.exp(LOCAL_CAPS["log_scale"] * magnitude) * (1 + LOCAL_CAPS["rotation"] * magnitude)
        radius = _fitting_radius(background, center, lo, hi, extra, growth)
    if radius < 4 * grid.spacing.max():
        raise InvalidArgumentError(
            f"grid too small for magnitude {magnitude}: object radius would be {radius:.2f} mm"
        )

    for _ in range(_MAX_ATTEMPTS):
        data, sites = _voronoi_labels(grid, center, radius, n_regions, rng)
        counts = np.bincount(data.reshape(-1), minlength=n_regions + 1)[1:]
        if counts.min() >= _MIN_REGION_VOXELS:
            break
    else:
        raise DegenerateConfigurationError(
            f"no valid site configuration after {_MAX_ATTEMPTS} attempts"
        )
    reference = LabelVolume(data, grid.voxel_to_world)

    if kind == "affine":
        inverse = truth.inverse()
        moving = resample_labels(reference, inverse, grid)
        return Phantom(reference, moving, truth, seed, inverse, sites)

    params = params or FusionParams(downsample=1)
    local = _random_local_affines(rng, sites, magnitude)
    V = build_svf(grid, local, params)
    phi = integrate_svf(V, params.integration_steps, grid)
    phi_inv = integrate_svf(invert_svf(V), params.integration_steps, grid)
    truth = compose_full(background, phi, grid)
    inverse = compose_inverse_full(background, phi_inv, grid)
    moving = resample_labels(reference, inverse, grid)
    return Phantom(reference, moving, truth, seed, inverse, sites)
