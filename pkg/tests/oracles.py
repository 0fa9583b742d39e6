"""Independent reference computations used by the tests.

None of these call into the package; they exist so that each checked routine
is compared against a route that shares no code with it.
"""

import itertools
import math

import numpy as np
import scipy.linalg


def rot2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotz(theta):
    R = np.eye(3)
    R[:2, :2] = rot2(theta)
    return R


def taylor_exp(M, terms=40):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def log_series_oracle(A, threshold=0.25, terms=400):
    """log A via scipy square roots then the Mercator series of log(I + E)."""
    X = np.array(A, dtype=float)
    n = X.shape[0]
    k = 0
    while np.linalg.norm(X - np.eye(n), 2) >= threshold:
        X = np.real(scipy.linalg.sqrtm(X))
        k += 1
    E = X - np.eye(n)
    out = np.zeros_like(E)
    P = np.eye(n)
    for j in range(1, terms):
        P = P @ E
        out += (-1) ** (j + 1) * P / j
    return out * 2**k


def brute_force_delaunay_edges(points, rtol=1e-9):
    """Edges of every simplex whose circumsphere is empty of the other points."""
    pts = np.asarray(points, dtype=float)
    n, d = pts.shape
    edges = set()
    for simplex in itertools.combinations(range(n), d + 1):
        P = pts[list(simplex)]
        A = 2 * (P[1:] - P[0])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        b = np.sum(P[1:] ** 2 - P[0] ** 2, axis=1)
        c = np.linalg.solve(A, b)
        r2 = np.sum((P[0] - c) ** 2)
        others = np.delete(pts, list(simplex), axis=0)
        if np.all(np.sum((others - c) ** 2, axis=1) > r2 * (1 + rtol)):
            for i, j in itertools.combinations(simplex, 2):
                edges.add((min(i, j), max(i, j)))
    return edges


def trilinear_point(vol, c):
    """Scalar trilinear interpolation at voxel coordinate c.

    Points outside the sampled box [0, n-1] on any axis give 0.
    """
    shape = vol.shape
    if any(not (0 <= c[a] <= shape[a] - 1) for a in range(3)):
        return 0.0
    f = [min(math.floor(v), n - 2) if n > 1 else 0 for v, n in zip(c, shape)]
    acc = 0.0
    for corner in itertools.product((0, 1), repeat=3):
        idx = [f[a] + corner[a] for a in range(3)]
        w = 1.0
        for a in range(3):
            frac = c[a] - f[a]
            w *= frac if corner[a] else 1 - frac
        if w == 0.0:
            continue
        acc += w * vol[tuple(idx)]
    return acc
