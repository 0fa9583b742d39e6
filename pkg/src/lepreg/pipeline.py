"""End-to-end registration from paired centroids to dense transformations."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import InvalidArgumentError, RegistrationError
from .fusion import (
    DisplacementField,
    FusionParams,
    VelocityField,
    build_svf,
    compose_full,
    compose_inverse_full,
    integrate_svf,
    invert_svf,
)
from .grid import GridSpec
from .linalg import AffineTransform
from .matching import (
    LocalAffineSet,
    delaunay_neighborhoods,
    fit_affine_wlls,
    fit_local_affines,
    fit_translations,
    prealign,
)
from .pointset import LabeledPointSet, PairedPointSets, pair_by_label

__all__ = ["RegistrationResult", "register", "MODES"]

MODES = ("affine", "polyaffine", "translations")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Everything a registration run produces.

    ``forward_field`` holds ``T = A_B o phi`` and ``inverse_field`` holds
    ``phi^-1 o A_B^-1``, both on the output grid. ``residual`` and
    ``residual_inverse`` keep ``phi`` and ``phi^-1`` alone. Timings are in
    milliseconds, keyed by stage name.
    """

    mode: str
    background_affine: AffineTransform
    pairs: PairedPointSets
    local_affines: LocalAffineSet | None = None
    velocity: VelocityField | None = None
    residual: DisplacementField | None = None
    residual_inverse: DisplacementField | None = None
    forward_field: DisplacementField | None = None
    inverse_field: DisplacementField | None = None
    status: tuple[str, ...] = ()
    timings: dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        doc = {
            "mode": self.mode,
            "n_pairs": int(len(self.pairs.common_labels)),
            "background_affine": self.background_affine.matrix.tolist(),
            "timings_ms": dict(self.timings),
            "status": list(self.status),
        }
        if self.status:
            doc["n_fallbacks"] = sum(s != "ok" for s in self.status)
        return doc


@contextmanager
def _stage(name: str, timings: dict[str, float]):
    t0 = time.perf_counter()
    try:
        yield
    except RegistrationError as exc:
        if exc.stage is None:
            exc.stage = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    finally:
        timings[name] = 1000.0 * (time.perf_counter() - t0)


def register(
    ref_pts: LabeledPointSet,
    mov_pts: LabeledPointSet,
    mode: str = "polyaffine",
    params: FusionParams | None = None,
    out_grid: GridSpec | None = None,
) -> RegistrationResult:
    """Register moving centroids to reference centroids.

    Stages: pair by label, fit the background affine, and (unless
    ``mode="affine"``) prealign, build Delaunay neighbourhoods on the
    reference points, fit local affines (or one translation per point in
    ``"translations"`` mode), blend their logs into a velocity field on the
    downsampled ``out_grid``, exponentiate ``+V`` and ``-V``, upsample and
    compose with the background affine.

    Errors raised by a stage carry its name in ``err.stage``.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    params = params or FusionParams()
    timings: dict[str, float] = {}

    with _stage("pair", timings):
        pairs = pair_by_label(ref_pts, mov_pts)
    with _stage("background_affine", timings):
        background = fit_affine_wlls(pairs.x, pairs.y, pairs.weights)
    if mode == "affine":
        return RegistrationResult(mode, background, pairs, timings=timings)

    if out_grid is None:
        raise InvalidArgumentError(f"{mode} mode needs an output grid")
    if out_grid.dim != pairs.dim:
        raise InvalidArgumentError(f"grid is {out_grid.dim}-D but points are {pairs.dim}-D")

    with _stage("prealign", timings):
        y_pre = prealign(pairs.y, background)
    if mode == "translations":
        with _stage("local_fits", timings):
            local = fit_translations(pairs.x, y_pre)
    else:
        with _stage("delaunay", timings):
            graph = delaunay_neighborhoods(pairs.x)
        with _stage("local_fits", timings):
            local = fit_local_affines(graph, pairs.x, y_pre, pairs.weights)
    with _stage("svf", timings):
        V = build_svf(out_grid, local, params)
    with _stage("integrate", timings):
        phi = integrate_svf(V, params.integration_steps, out_grid)
        phi_inv = integrate_svf(invert_svf(V), params.integration_steps, out_grid)
    with _stage("compose", timings):
        forward = compose_full(background, phi, out_grid)
        inverse = compose_inverse_full(background, phi_inv, out_grid)
    return RegistrationResult(
        mode,
        background,
        pairs,
        local,
        V,
        phi,
        phi_inv,
        forward,
        inverse,
        local.status,
        timings,
    )
