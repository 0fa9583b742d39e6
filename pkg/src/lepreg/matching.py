"""Closed-form affine fits between paired points, and Delaunay neighbourhoods."""

# ruff: noqa: N806
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .delaunay import delaunay_simplices
from .errors import (
    DegenerateConfigurationError,
    InvalidArgumentError,
    LogNotDefinedError,
)
from .linalg import AffineTransform, LogAffine, affine_invert
from .pointset import check_affinely_independent

__all__ = [
    "NeighborhoodGraph",
    "LocalAffineSet",
    "fit_affine_wlls",
    "prealign",
    "delaunay_neighborhoods",
    "fit_local_affines",
    "fit_translations",
]

MAX_SCATTER_CONDITION = 1e12

STATUS_OK = "ok"


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """``neighborhoods[i]`` holds ``i`` and every point sharing a simplex edge with it."""

    n: int
    neighborhoods: tuple[NDArray[np.int64], ...]
    simplices: NDArray[np.int64] | None = None

    def edges(self) -> set[tuple[int, int]]:
        return {(i, int(j)) for i, nb in enumerate(self.neighborhoods) for j in nb if i < j}


@dataclass(frozen=True, eq=False)
class LocalAffineSet:
    """Per-point local affines, their anchors and principal logarithms.

    ``status[i]`` is ``"ok"`` or a ``"translation_fallback: <reason>"`` note.
    """

    anchors: NDArray[np.float64]
    transforms: tuple[AffineTransform, ...]
    logs: tuple[LogAffine, ...]
    status: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.transforms)
        anchors = np.asarray(self.anchors, dtype=float)
        if anchors.shape[0] != n or len(self.logs) != n:
            raise InvalidArgumentError("anchors, transforms and logs must share their length")
        object.__setattr__(self, "anchors", anchors)
        if not self.status:
            object.__setattr__(self, "status", (STATUS_OK,) * n)

    def __len__(self) -> int:
        return len(self.transforms)

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def log_stack(self) -> NDArray[np.float64]:
        """Logs as an ``(n, dim+1, dim+1)`` array."""
        return np.stack([lg.matrix for lg in self.logs])

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "anchors": self.anchors.tolist(),
            "transforms": [t.matrix.tolist() for t in self.transforms],
            "logs": [lg.matrix.tolist() for lg in self.logs],
            "status": list(self.status),
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, doc: dict) -> LocalAffineSet:
        return cls(
            np.array(doc["anchors"], dtype=float),
            tuple(AffineTransform.from_matrix(m) for m in doc["transforms"]),
            tuple(LogAffine(np.array(m)) for m in doc["logs"]),
            tuple(doc.get("status", ())),
        )


def _weighted_fit(x, y, w):
    """Weighted LS affine fit; returns (L, t, x_mean, condition number)."""
    wn = w / w.sum()
    xm = wn @ x
    ym = wn @ y
    xc = x - xm
    yc = y - ym
    Sxx = (xc * wn[:, None]).T @ xc
    Syx = (yc * wn[:, None]).T @ xc
    cond = np.linalg.cond(Sxx)
    if not np.isfinite(cond) or cond > MAX_SCATTER_CONDITION:
        return None, None, xm, cond
    L = np.linalg.solve(Sxx.T, Syx.T).T
    t = ym - L @ xm
    return L, t, xm, cond


def _check_inputs(x, y, w):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape != y.shape or x.shape[1] not in (2, 3):
        raise InvalidArgumentError(f"point lists must be equal (n, 2|3) arrays: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if w is None:
        w = np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise InvalidArgumentError("one weight per point required")
    if np.any(w < 0) or not w.sum() > 0:
        raise InvalidArgumentError("weights must be nonnegative and not all zero")
    return x, y, w


def fit_affine_wlls(x: ArrayLike, y: ArrayLike, weights: ArrayLike | None = None) -> AffineTransform:
    """Affine ``A`` minimising ``sum_i w_i ||y_i - A(x_i)||^2``.

    Closed form on weighted-centred coordinates:
    ``L = (sum w y' x'^T)(sum w x' x'^T)^-1`` and ``t = y_bar - L x_bar``.

    Raises
    ------
    DegenerateConfigurationError
        Fewer than ``dim + 1`` points, or a centred scatter matrix whose
        condition number exceeds 1e12.
    """
    x, y, w = _check_inputs(x, y, weights)
    d = x.shape[1]
    if x.shape[0] < d + 1:
        raise DegenerateConfigurationError(f"{x.shape[0]} points cannot constrain a {d}-D affine")
    L, t, _, cond = _weighted_fit(x, y, w)
    if L is None:
        raise DegenerateConfigurationError(
            f"scatter matrix condition number {cond:.3g} exceeds {MAX_SCATTER_CONDITION:g}"
        )
    return AffineTransform(L, t)


def prealign(points: ArrayLike, background: AffineTransform) -> NDArray[np.float64]:
    """Map moving points back through the inverse background affine."""
    return affine_invert(background)(points)


def delaunay_neighborhoods(points: ArrayLike) -> NeighborhoodGraph:
    """Neighbourhood of each point from the Delaunay triangulation of the set."""
    pts = np.asarray(points, dtype=float)
    check_affinely_independent(pts, "neighbourhood points")
    simplices = delaunay_simplices(pts)
    n = len(pts)
    nbrs: list[set[int]] = [{i} for i in range(n)]
    for s in simplices:
        for i in s:
            nbrs[i].update(int(j) for j in s)
    hoods = tuple(np.array(sorted(nb), dtype=np.int64) for nb in nbrs)
    return NeighborhoodGraph(n, hoods, simplices)


def _translation_fallback(x, yt, w):
    wn = w / w.sum()
    xm = wn @ x
    return AffineTransform.translation_only(wn @ yt - xm), xm


def fit_local_affines(
    graph: NeighborhoodGraph, x: ArrayLike, y_prealigned: ArrayLike, weights: ArrayLike | None = None
) -> LocalAffineSet:
    """Fit one affine per neighbourhood, anchored at its weighted barycentre.

    A neighbourhood whose scatter matrix is too ill-conditioned, or whose fit
    has ``det(L) <= 0`` or no principal logarithm, falls back to the
    translation between its weighted barycentres; ``status`` records why.
    """
    x, yt, w = _check_inputs(x, y_prealigned, weights)
    if graph.n != x.shape[0]:
        raise InvalidArgumentError(f"graph has {graph.n} nodes but {x.shape[0]} points given")
    anchors, transforms, logs, status = [], [], [], []
    for i, hood in enumerate(graph.neighborhoods):
        xs, ys, ws = x[hood], yt[hood], w[hood]
        if not ws.sum() > 0:
            raise InvalidArgumentError(f"neighbourhood {i} has zero total weight")
        L, t, xm, cond = _weighted_fit(xs, ys, ws)
        reason = None
        if L is None:
            reason = f"scatter condition {cond:.3g}"
        elif np.linalg.det(L) <= 0:
            reason = f"det(L)={np.linalg.det(L):.3g}"
        if reason is None:
            A = AffineTransform(L, t)
            try:
                lg = A.log()
            except LogNotDefinedError as exc:
                reason = f"log undefined ({exc.eigenvalue})"
        if reason is not None:
            A, xm = _translation_fallback(xs, ys, ws)
            lg = A.log()
            status.append(f"translation_fallback: {reason}")
        else:
            status.append(STATUS_OK)
        anchors.append(xm)
        transforms.append(A)
        logs.append(lg)
    return LocalAffineSet(np.array(anchors), tuple(transforms), tuple(logs), tuple(status))


def fit_translations(x: ArrayLike, y_prealigned: ArrayLike) -> LocalAffineSet:
    """Singleton neighbourhoods: one pure translation ``y_i - x_i`` per point."""
    x, yt, _ = _check_inputs(x, y_prealigned, None)
    d = x.shape[1]
    transforms, logs = [], []
    for xi, yi in zip(x, yt):
        t = yi - xi
        transforms.append(AffineTransform.translation_only(t))
        # log of a pure translation is exact: zero linear block, t in last column
        M = np.zeros((d + 1, d + 1))
        M[:d, d] = t
        logs.append(LogAffine(M))
    return LocalAffineSet(x.copy(), tuple(transforms), tuple(logs))
