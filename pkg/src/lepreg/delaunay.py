"""Incremental Bowyer-Watson Delaunay triangulation in 2-D and 3-D.

Input coordinates are converted exactly to integers (every float is a dyadic
rational, so scaling by a common power of two is lossless) and all
orientation and in-circumsphere decisions are made in exact integer
arithmetic. The enclosing super-simplex is placed ~2**64 times farther out
than the data, which in exact arithmetic only hides hull simplices whose
circumradius exceeds that factor.

Ties (a point exactly on a circumsphere) count as *outside*, so an existing
simplex is kept rather than replaced; the outcome for cospherical input is
therefore deterministic given the insertion order.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateConfigurationError, InvalidArgumentError


def _det(rows: list[list[int]]) -> int:
    """Exact integer determinant (fraction-free Bareiss elimination)."""
    a = [list(r) for r in rows]
    n = len(a)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        akk = a[k][k]
        for i in range(k + 1, n):
            aik = a[i][k]
            row_i, row_k = a[i], a[k]
            for j in range(k + 1, n):
                row_i[j] = (row_i[j] * akk - aik * row_k[j]) // prev
        prev = akk
    return sign * a[n - 1][n - 1]


def _orient(pts: list[tuple[int, ...]]) -> int:
    p0 = pts[0]
    return _det([[a - b for a, b in zip(p, p0)] for p in pts[1:]])


def _insphere(pts: list[tuple[int, ...]], q: tuple[int, ...]) -> int:
    rows = []
    for p in pts:
        diff = [a - b for a, b in zip(p, q)]
        rows.append(diff + [sum(v * v for v in diff)])
    return _det(rows)


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def _calibrate(d: int) -> int:
    # sign relating orientation and insphere for a point known to be inside
    pts = [tuple([0] * d)] + [tuple((d + 1) * int(i == k) for i in range(d)) for k in range(d)]
    centroid = tuple(1 for _ in range(d))
    return _sign(_insphere(pts, centroid)) * _sign(_orient(pts))


_INSIDE_SIGN = {2: _calibrate(2), 3: _calibrate(3)}


def _to_integers(points: NDArray[np.float64]) -> list[tuple[int, ...]]:
    fracs = [[Fraction(float(v)) for v in p] for p in points]
    denom = max(f.denominator for row in fracs for f in row)
    return [tuple(int(f * denom) for f in row) for row in fracs]


def _float_circumspheres(P: NDArray[np.float64]) -> tuple[NDArray, NDArray]:
    """Approximate centres/radii^2 for a stack of simplices ``(m, d+1, d)``."""
    A = 2.0 * (P[:, 1:] - P[:, :1])
    b = np.sum(P[:, 1:] ** 2 - P[:, :1] ** 2, axis=2)
    with np.errstate(all="ignore"):
        try:
            c = np.linalg.solve(A, b[..., None])[..., 0]
        except np.linalg.LinAlgError:
            c = np.full(P[:, 0].shape, np.nan)
        r2 = np.sum((P[:, 0] - c) ** 2, axis=1)
    return c, r2


class _Triangulation:
    def __init__(self, ipoints: list[tuple[int, ...]], fpoints: NDArray[np.float64]):
        d = len(ipoints[0])
        self.d = d
        R = max(abs(v) for p in ipoints for v in p) + 1
        M = R * d * 2**64
        base = tuple([-M] * d)
        supers = [base] + [
            tuple(-M + (d + 1) * M * int(i == k) for i in range(d)) for k in range(d)
        ]
        self.verts: list[tuple[int, ...]] = supers + list(ipoints)
        fsup = np.array(supers, dtype=float)
        self.fverts = np.vstack([fsup, fpoints])
        self.n_super = d + 1
        self.simplices: dict[int, tuple[int, ...]] = {}
        self.orient: dict[int, int] = {}
        self.facets: dict[tuple[int, ...], set[int]] = {}
        self._next_id = 0
        self._add(tuple(range(d + 1)))

    def _add(self, simplex: tuple[int, ...]) -> int:
        simplex = tuple(sorted(simplex))
        o = _sign(_orient([self.verts[v] for v in simplex]))
        if o == 0:
            raise DegenerateConfigurationError(
                f"flat simplex {simplex} produced during insertion (degenerate input)"
            )
        sid = self._next_id
        self._next_id += 1
        self.simplices[sid] = simplex
        self.orient[sid] = o
        for f in itertools.combinations(simplex, self.d):
            self.facets.setdefault(f, set()).add(sid)
        return sid

    def _remove(self, sid: int) -> None:
        simplex = self.simplices.pop(sid)
        del self.orient[sid]
        for f in itertools.combinations(simplex, self.d):
            owners = self.facets[f]
            owners.discard(sid)
            if not owners:
                del self.facets[f]

    def _bad(self, sid: int, q: tuple[int, ...]) -> bool:
        pts = [self.verts[v] for v in self.simplices[sid]]
        s = _sign(_insphere(pts, q)) * self.orient[sid] * _INSIDE_SIGN[self.d]
        return s > 0

    def _seed(self, vi: int) -> int:
        q = self.verts[vi]
        ids = list(self.simplices)
        P = self.fverts[np.array([self.simplices[s] for s in ids])]
        c, r2 = _float_circumspheres(P)
        with np.errstate(all="ignore"):
            score = (np.sum((c - self.fverts[vi]) ** 2, axis=1) - r2) / r2
        score = np.where(np.isfinite(score), score, np.inf)
        for k in np.argsort(score, kind="stable"):
            if self._bad(ids[k], q):
                return ids[k]
        raise DegenerateConfigurationError(f"point {vi - self.n_super} not strictly inside any circumsphere")

    def insert(self, vi: int) -> None:
        q = self.verts[vi]
        seed = self._seed(vi)
        bad = {seed}
        stack = [seed]
        while stack:
            sid = stack.pop()
            for f in itertools.combinations(self.simplices[sid], self.d):
                for nb in self.facets[f]:
                    if nb not in bad and self._bad(nb, q):
                        bad.add(nb)
                        stack.append(nb)
        boundary = []
        for sid in bad:
            for f in itertools.combinations(self.simplices[sid], self.d):
                owners = self.facets[f]
                if len(owners) == 2 and owners <= bad:
                    continue
                boundary.append(f)
        for sid in bad:
            self._remove(sid)
        for f in boundary:
            self._add(f + (vi,))

    def real_simplices(self) -> NDArray[np.int64]:
        ns = self.n_super
        out = [
            [v - ns for v in s] for s in self.simplices.values() if min(s) >= ns
        ]
        return np.array(sorted(out), dtype=np.int64).reshape(-1, self.d + 1)


def delaunay_simplices(points: ArrayLike) -> NDArray[np.int64]:
    """Delaunay simplices (triangles in 2-D, tetrahedra in 3-D) as index rows.

    Rows are sorted, and the row list is in lexicographic order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise InvalidArgumentError(f"points must be (n, 2) or (n, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("points must be finite")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise DegenerateConfigurationError("duplicate points")
    tri = _Triangulation(_to_integers(pts), pts)
    for i in range(len(pts)):
        tri.insert(tri.n_super + i)
    simplices = tri.real_simplices()
    if len(simplices) == 0:
        raise DegenerateConfigurationError("points do not span a full-dimensional simplex")
    return simplices
