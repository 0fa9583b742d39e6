"""Small dense matrix functions and affine algebra.

Everything here works on matrices of size at most 4x4, so the routines favour
clarity and accuracy over asymptotic speed:

* :func:`mat_exp` -- scaling and squaring around a truncated Taylor core.
* :func:`mat_log_principal` -- inverse scaling and squaring: repeated
  Denman-Beavers square roots, then a Gauss-Legendre (diagonal Pade) core.
* :func:`polar_decompose` -- rotation/stretch split through the SVD.
* :func:`affine_distances` -- component-wise geometric distances between two
  affine maps (linear part, rotation, stretch, translation).
"""

# ruff: noqa: N806  - uppercase matrix names follow mathematical convention
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .errors import (
    InvalidArgumentError,
    LogNotDefinedError,
    OrientationReversingError,
    SingularMatrixError,
)

__all__ = [
    "AffineTransform",
    "LogAffine",
    "PolarFactors",
    "AffineDistances",
    "mat_exp",
    "mat_log_principal",
    "sqrtm_db",
    "polar_decompose",
    "affine_compose",
    "affine_invert",
    "affine_distances",
    "read_affine_text",
    "write_affine_text",
]

# Taylor degree of the exponential core; the scaled argument has 1-norm <= 1/2.
_EXP_TAYLOR_DEGREE = 18
# Square roots are taken until ||X - I||_F drops below this.
_LOG_SQRT_THRESHOLD = 0.25
_LOG_QUADRATURE_POINTS = 8
_MAX_SQRT = 64
# Band for "on the closed negative real half-line".
_NEG_AXIS_TOL = 1e-12
_SINGULAR_RTOL = 1e-14


def _as_square(M: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return M


# ---------------------------------------------------------------------------
# Affine types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Affine map ``x -> linear @ x + translation`` in world millimetres."""

    linear: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self):
        L = np.array(self.linear, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] not in (2, 3):
            raise InvalidArgumentError(f"linear part must be 2x2 or 3x3, got {L.shape}")
        if t.shape != (L.shape[0],):
            raise InvalidArgumentError(
                f"translation must have length {L.shape[0]}, got {t.shape}"
            )
        L.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "linear", L)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    @property
    def matrix(self) -> NDArray[np.float64]:
        """Homogeneous ``(dim+1, dim+1)`` matrix ``[[L, t], [0, 1]]``."""
        d = self.dim
        M = np.eye(d + 1)
        M[:d, :d] = self.linear
        M[:d, d] = self.translation
        return M

    @classmethod
    def identity(cls, dim: int = 3) -> AffineTransform:
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def from_matrix(cls, M: ArrayLike) -> AffineTransform:
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] not in (3, 4):
            raise InvalidArgumentError(f"expected a 3x3 or 4x4 matrix, got {M.shape}")
        d = M.shape[0] - 1
        if not np.allclose(M[d, :d], 0.0, atol=1e-12) or abs(M[d, d] - 1.0) > 1e-12:
            raise InvalidArgumentError("last row of a homogeneous affine must be [0 ... 0 1]")
        return cls(M[:d, :d], M[:d, d])

    @classmethod
    def translation_only(cls, t: ArrayLike) -> AffineTransform:
        t = np.asarray(t, dtype=float)
        return cls(np.eye(t.size), t)

    def __call__(self, points: ArrayLike) -> NDArray[np.float64]:
        """Apply to an array of points with trailing axis ``dim``."""
        p = np.asarray(points, dtype=float)
        return p @ self.linear.T + self.translation

    def __matmul__(self, other: AffineTransform) -> AffineTransform:
        return affine_compose(self, other)

    def inverse(self) -> AffineTransform:
        return affine_invert(self)

    def log(self) -> LogAffine:
        return LogAffine(mat_log_principal(self.matrix))

    def __repr__(self):
        return f"AffineTransform(dim={self.dim}, matrix={self.matrix.tolist()!r})"


@dataclass(frozen=True, eq=False)
class LogAffine:
    """Principal logarithm of a homogeneous affine matrix (last row zero)."""

    matrix: NDArray[np.float64]

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] not in (3, 4):
            raise InvalidArgumentError(f"log-affine must be 3x3 or 4x4, got {M.shape}")
        if np.any(M[-1] != 0.0):
            raise InvalidArgumentError("last row of a log-affine must be exactly zero")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0] - 1

    def exp(self) -> AffineTransform:
        E = mat_exp(self.matrix)
        E[-1] = 0.0
        E[-1, -1] = 1.0
        return AffineTransform.from_matrix(E)


class PolarFactors(NamedTuple):
    rotation: NDArray[np.float64]
    stretch: NDArray[np.float64]


# ---------------------------------------------------------------------------
# Matrix exponential and logarithm
# ---------------------------------------------------------------------------


def mat_exp(M: ArrayLike) -> NDArray[np.float64]:
    """Matrix exponential by scaling and squaring.

    The argument is divided by ``2**k`` with
    ``k = max(0, ceil(log2(||M||_1)) + 1)`` so that the scaled matrix has
    1-norm at most 1/2, a degree-18 Taylor polynomial is evaluated by Horner's
    rule and the result is squared ``k`` times.
    """
    M = _as_square(M)
    n = M.shape[0]
    norm1 = np.linalg.norm(M, 1)
    k = 0
    if norm1 > 0:
        k = max(0, math.ceil(math.log2(norm1)) + 1)
    X = M / 2.0**k
    I = np.eye(n)
    E = I.copy()
    for j in range(_EXP_TAYLOR_DEGREE, 0, -1):
        E = I + (X @ E) / j
    for _ in range(k):
        E = E @ E
    return E


def sqrtm_db(A: ArrayLike, tol: float = 1e-15, max_iter: int = 100) -> NDArray[np.float64]:
    """Principal square root via the product form of the Denman-Beavers iteration."""
    A = _as_square(A)
    n = A.shape[0]
    I = np.eye(n)
    M = A.copy()
    Y = A.copy()
    for _ in range(max_iter):
        Minv = np.linalg.inv(M)
        Y = Y @ (I + Minv) / 2.0
        M = (I + (M + Minv) / 2.0) / 2.0
        if np.linalg.norm(M - I, 1) <= tol * n:
            break
    return Y


def _eigenvalues_from_real_schur(T: NDArray[np.float64]) -> list[complex]:
    n = T.shape[0]
    eigs: list[complex] = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            a, b, c, d = T[i, i], T[i, i + 1], T[i + 1, i], T[i + 1, i + 1]
            mean = 0.5 * (a + d)
            disc = complex(0.25 * (a - d) ** 2 + b * c)
            root = disc**0.5
            eigs.extend([mean + root, mean - root])
            i += 2
        else:
            eigs.append(complex(T[i, i]))
            i += 1
    return eigs


def _check_log_exists(A: NDArray[np.float64]) -> None:
    T, _ = scipy.linalg.schur(A, output="real")
    for lam in _eigenvalues_from_real_schur(T):
        mag = abs(lam)
        if abs(lam.imag) <= _NEG_AXIS_TOL * mag and lam.real <= _NEG_AXIS_TOL:
            value = lam.real if lam.imag == 0.0 else lam
            raise LogNotDefinedError(value)


def _log_near_identity(X: NDArray[np.float64]) -> NDArray[np.float64]:
    # log(I + E) = int_0^1 E (I + s E)^{-1} ds, by Gauss-Legendre quadrature;
    # m nodes give the [m/m] Pade approximant.
    n = X.shape[0]
    I = np.eye(n)
    E = X - I
    nodes, weights = np.polynomial.legendre.leggauss(_LOG_QUADRATURE_POINTS)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    L = np.zeros_like(E)
    for s, w in zip(nodes, weights):
        L += w * np.linalg.solve((I + s * E).T, E.T).T
    return L


def mat_log_principal(A: ArrayLike) -> NDArray[np.float64]:
    """Principal matrix logarithm by inverse scaling and squaring.

    Raises
    ------
    InvalidArgumentError
        If ``A`` is not square, not finite, or singular.
    LogNotDefinedError
        If an eigenvalue of ``A`` lies on the closed negative real half-line.

    Notes
    -----
    When ``A`` has the homogeneous affine form (last row ``[0 ... 0 1]``) the
    last row of the result is set to exactly zero.
    """
    A = _as_square(A)
    n = A.shape[0]
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= _SINGULAR_RTOL * s[0] or s[0] == 0.0:
        raise InvalidArgumentError("cannot take the logarithm of a singular matrix")
    _check_log_exists(A)

    homogeneous = np.all(A[-1, :-1] == 0.0) and A[-1, -1] == 1.0
    I = np.eye(n)
    X = A
    k = 0
    while np.linalg.norm(X - I, "fro") >= _LOG_SQRT_THRESHOLD:
        if k >= _MAX_SQRT:
            raise LogNotDefinedError(
                None, "square-root iteration failed to approach the identity"
            )
        X = sqrtm_db(X)
        k += 1
    L = _log_near_identity(X) * 2.0**k
    if homogeneous:
        L[-1, :] = 0.0
    return L


# ---------------------------------------------------------------------------
# Polar decomposition and affine algebra
# ---------------------------------------------------------------------------


def polar_decompose(L: ArrayLike) -> PolarFactors:
    """Split ``L = R @ S`` with ``R`` a rotation and ``S`` SPD.

    Computed from the SVD ``L = U diag(s) V^T`` as ``R = U V^T`` and
    ``S = V diag(s) V^T``.
    """
    L = _as_square(L, "linear part")
    U, s, Vt = np.linalg.svd(L)
    if s[-1] <= 1e-12 * s[0]:
        raise InvalidArgumentError("linear part is rank deficient")
    if np.linalg.det(L) <= 0:
        raise OrientationReversingError(
            "linear part reverses orientation (det <= 0); no rotation/stretch split"
        )
    R = U @ Vt
    S = (Vt.T * s) @ Vt
    S = 0.5 * (S + S.T)
    return PolarFactors(R, S)


def affine_compose(A: AffineTransform, B: AffineTransform) -> AffineTransform:
    """Return ``A o B``, i.e. ``x -> A(B(x))``."""
    if A.dim != B.dim:
        raise InvalidArgumentError(f"dimension mismatch: {A.dim} vs {B.dim}")
    return AffineTransform(A.linear @ B.linear, A.linear @ B.translation + A.translation)


def affine_invert(A: AffineTransform) -> AffineTransform:
    s = np.linalg.svd(A.linear, compute_uv=False)
    if s[-1] <= _SINGULAR_RTOL * s[0] or s[0] == 0.0:
        raise SingularMatrixError("affine linear part is singular to machine precision")
    Linv = np.linalg.inv(A.linear)
    return AffineTransform(Linv, -Linv @ A.translation)


class AffineDistances(NamedTuple):
    d_linear: float
    d_rotation: float
    d_stretch: float
    d_translation: float


def _spd_log_distance(Si: NDArray[np.float64], Sj: NDArray[np.float64]) -> float:
    w, Q = np.linalg.eigh(Si)
    isqrt = (Q / np.sqrt(w)) @ Q.T
    C = isqrt @ Sj @ isqrt
    mu = np.linalg.eigvalsh(0.5 * (C + C.T))
    return float(np.sqrt(np.sum(np.log(mu) ** 2)))


def affine_distances(A: AffineTransform, B: AffineTransform) -> AffineDistances:
    """Geometric distances between the components of two affine maps.

    ``d_linear = ||log(L_a^-1 L_b)||_F``, ``d_rotation = ||log(R_a^T R_b)||_F``,
    ``d_stretch = ||log(S_a^-1/2 S_b S_a^-1/2)||_F`` and
    ``d_translation = ||t_a - t_b||_2`` where ``L = R S`` is the polar
    decomposition.
    """
    if A.dim != B.dim:
        raise InvalidArgumentError(f"dimension mismatch: {A.dim} vs {B.dim}")
    d_lin = np.linalg.norm(mat_log_principal(np.linalg.solve(A.linear, B.linear)), "fro")
    Ra, Sa = polar_decompose(A.linear)
    Rb, Sb = polar_decompose(B.linear)
    d_rot = np.linalg.norm(mat_log_principal(Ra.T @ Rb), "fro")
    d_str = _spd_log_distance(Sa, Sb)
    d_tr = np.linalg.norm(A.translation - B.translation)
    return AffineDistances(float(d_lin), float(d_rot), d_str, float(d_tr))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def write_affine_text(A: AffineTransform, path: str | Path) -> None:
    """Write the homogeneous matrix, one row per line (reference -> moving)."""
    rows = [" ".join(f"{v:.17g}" for v in row) for row in A.matrix]
    Path(path).write_text("\n".join(rows) + "\n")


def read_affine_text(path: str | Path) -> AffineTransform:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"affine file not found: {path}") from exc
    rows = [line.split() for line in text.splitlines() if line.strip()]
    try:
        M = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: non-numeric entry in affine file") from exc
    if M.ndim != 2:
        raise InvalidArgumentError(f"{path}: ragged rows in affine file")
    return AffineTransform.from_matrix(M)
