"""Command-line interface: ``lepreg {register,eval,affdist,phantom,fusedemo}``.

Results go to standard output as JSON; diagnostics go to standard error.
Failures print a single JSON line on standard error and exit with 1 (usage),
2 (input data) or 3 (numerical failure). No output file is left behind by a
failed run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DataError, InvalidArgumentError, NumericalError, RegistrationError
from .evaluation import QC_THRESHOLD, dice, load_groups, make_phantom, qc_flag, report_text
from .fusion import FusionParams, field_to_volume, jacobian_determinant, rotation_pair_demo
from .grid import GridSpec
from .linalg import AffineTransform, affine_distances, read_affine_text, write_affine_text
from .pointset import (
    BRAIN_EXCLUDED_LABELS,
    WeightMode,
    centroids_from_labels,
    read_centroids_csv,
)
from .pipeline import MODES, register
from .volume_io import LabelVolume, read_volume, resample_labels, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

_DEFAULTS = FusionParams()
THREADS_HELP = "worker cap for numerical libraries (0 = auto)"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    stage = getattr(exc, "stage", None)
    if stage:
        doc["stage"] = stage
    print(json.dumps(doc), file=sys.stderr)
    return code


class _Outputs:
    """Stage output files in temporaries; move them into place only on commit."""

    def __init__(self):
        self._pending: list[tuple[Path, Path]] = []

    def path_for(self, final: str | os.PathLike) -> Path:
        final = Path(final)
        fd, tmp = tempfile.mkstemp(prefix=".lepreg-", suffix="".join(final.suffixes), dir=final.parent or ".")
        os.close(fd)
        self._pending.append((Path(tmp), final))
        return Path(tmp)

    def commit(self) -> None:
        umask = os.umask(0)
        os.umask(umask)
        for tmp, final in self._pending:
            os.chmod(tmp, 0o666 & ~umask)
            os.replace(tmp, final)
        self._pending.clear()

    def discard(self) -> None:
        for tmp, _ in self._pending:
            tmp.unlink(missing_ok=True)
        self._pending.clear()


@contextmanager
def _staged_outputs():
    out = _Outputs()
    try:
        yield out
        out.commit()
    finally:
        out.discard()


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------


def _parse_exclude(text: str | None) -> set[int]:
    if not text:
        return set()
    labels: set[int] = set()
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok == "brain":
            labels |= BRAIN_EXCLUDED_LABELS
            continue
        try:
            labels.add(int(tok))
        except ValueError as exc:
            raise InvalidArgumentError(f"bad label {tok!r} in --exclude-labels") from exc
    return labels


def _load_points(path: str, exclude, weight_mode):
    """Centroids plus the label volume they came from (None for CSV input)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if p.suffix.lower() == ".csv":
        pts = read_centroids_csv(p)
        keep = ~np.isin(pts.labels, list(exclude)) if exclude else np.ones(len(pts), bool)
        if weight_mode is WeightMode.UNIFORM or pts.weight_mode is WeightMode.UNIFORM:
            pts = type(pts).from_points(pts.labels[keep], pts.points[keep])
        else:
            pts = type(pts).from_points(pts.labels[keep], pts.points[keep], pts.weights[keep])
        return pts, None
    vol = read_volume(p)
    if not isinstance(vol, LabelVolume):
        raise InvalidArgumentError(f"{path}: expected an integer label volume")
    if np.asarray(vol.data).ndim != 3:
        raise InvalidArgumentError(f"{path}: label volume must be 3-D")
    return centroids_from_labels(vol, exclude, weight_mode), vol


def cmd_register(args) -> int:
    exclude = _parse_exclude(args.exclude_labels)
    weight_mode = WeightMode(args.weight_mode)
    params = FusionParams(args.sigma, args.wbg, args.downsample, args.steps)
    ref_pts, ref_vol = _load_points(args.ref, exclude, weight_mode)
    mov_pts, mov_vol = _load_points(args.mov, exclude, weight_mode)

    grid = None
    if args.grid is not None:
        grid = read_volume(args.grid).grid
    elif ref_vol is not None:
        grid = ref_vol.grid
    if args.mode != "affine" and grid is None:
        raise InvalidArgumentError(f"{args.mode} mode with centroid input needs --grid")
    if args.mode == "affine" and (args.out_field or args.out_field_inv):
        raise InvalidArgumentError("--out-field/--out-field-inv need a non-affine mode")
    if args.out_resampled and (mov_vol is None or grid is None):
        raise InvalidArgumentError("--out-resampled needs a moving label volume and a reference grid")

    result = register(ref_pts, mov_pts, args.mode, params, grid)

    with _staged_outputs() as out:
        write_affine_text(result.background_affine, out.path_for(args.out_aff))
        if args.out_field:
            write_volume(field_to_volume(result.forward_field), out.path_for(args.out_field))
        if args.out_field_inv:
            write_volume(field_to_volume(result.inverse_field), out.path_for(args.out_field_inv))
        if args.out_resampled:
            transform = result.forward_field if result.forward_field is not None else result.background_affine
            write_volume(resample_labels(mov_vol, transform, grid), out.path_for(args.out_resampled))

    summary = result.summary()
    summary["params"] = {
        "sigma": params.sigma,
        "w_B": params.w_B,
        "downsample": params.downsample,
        "steps": params.integration_steps,
        "weight_mode": weight_mode.value,
        "excluded_labels": sorted(exclude),
    }
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / affdist
# ---------------------------------------------------------------------------


def _read_labels(path: str) -> LabelVolume:
    vol = read_volume(path)
    if not isinstance(vol, LabelVolume):
        raise InvalidArgumentError(f"{path}: expected an integer label volume")
    return vol


def cmd_eval(args) -> int:
    a, b = _read_labels(args.ref), _read_labels(args.mov)
    labels = None
    if args.labels:
        labels = {int(v) for v in args.labels.split(",") if v.strip()}
    groups = load_groups(args.groups) if args.groups else None
    report = dice(a, b, labels, groups)
    doc = report.to_json()
    doc["threshold"] = args.threshold
    doc["flagged"] = qc_flag(report, args.threshold)
    print(report.to_text(), file=sys.stderr)
    print(json.dumps(doc))
    return EXIT_OK


def cmd_affdist(args) -> int:
    a, b = read_affine_text(args.a), read_affine_text(args.b)
    d = affine_distances(a, b)
    print(report_text(d), file=sys.stderr)
    print(json.dumps(d._asdict()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------


def cmd_phantom(args) -> int:
    grid = GridSpec.centered((args.size,) * 3, args.spacing)
    ph = make_phantom(args.kind, args.regions, grid, args.magnitude, args.seed)
    with _staged_outputs() as out:
        write_volume(ph.reference, out.path_for(args.out_ref))
        write_volume(ph.moving, out.path_for(args.out_mov))
        if args.out_truth:
            if isinstance(ph.truth, AffineTransform):
                write_affine_text(ph.truth, out.path_for(args.out_truth))
            else:
                write_volume(field_to_volume(ph.truth), out.path_for(args.out_truth))
    doc = {
        "kind": args.kind,
        "regions": args.regions,
        "seed": args.seed,
        "magnitude": args.magnitude,
        "grid": {"size": args.size, "spacing": args.spacing},
        "truth": "affine" if isinstance(ph.truth, AffineTransform) else "displacement_field",
    }
    if isinstance(ph.truth, AffineTransform):
        doc["truth_matrix"] = ph.truth.matrix.tolist()
    print(json.dumps(doc))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fusedemo
# ---------------------------------------------------------------------------


def render_grid(field, negative=None, scale: int = 4, spacing_px: int = 4) -> np.ndarray:
    """Raster of a deformed square grid as an ``(H, W, 3)`` uint8 image.

    Lines of the reference grid every ``spacing_px`` voxels are pushed
    through ``field`` and drawn in black; voxels flagged in ``negative`` are
    shaded red.
    """
    g = field.grid
    nx, ny = g.dims
    img = np.full((ny * scale, nx * scale, 3), 255, dtype=np.uint8)
    if negative is not None:
        ii, jj = np.nonzero(negative)
        for i, j in zip(ii, jj):
            img[j * scale : (j + 1) * scale, i * scale : (i + 1) * scale] = (255, 160, 160)
    t = np.linspace(0, 1, 8 * max(nx, ny) * scale)
    lines = []
    for i in range(0, nx, spacing_px):
        lines.append(np.stack([np.full_like(t, i), t * (ny - 1)], axis=1))
    for j in range(0, ny, spacing_px):
        lines.append(np.stack([t * (nx - 1), np.full_like(t, j)], axis=1))
    for vox in lines:
        mapped = g.world_to_voxel_points(field.apply(g.voxel_to_world_points(vox)))
        px = np.round((mapped + 0.5) * scale - 0.5).astype(int)
        ok = (px[:, 0] >= 0) & (px[:, 0] < nx * scale) & (px[:, 1] >= 0) & (px[:, 1] < ny * scale)
        img[px[ok, 1], px[ok, 0]] = 0
    return img[::-1]  # world +y upwards


def write_ppm(img: np.ndarray, path) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def cmd_fusedemo(args) -> int:
    demo = rotation_pair_demo(args.angle, args.separation, args.sigma, args.size, args.spacing, args.single)
    jac = demo.min_jacobians()
    out_dir = Path(args.out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    with _staged_outputs() as out:
        for name, field in (("lept", demo.lept), ("naive", demo.naive)):
            neg = jacobian_determinant(field) <= 0
            write_ppm(render_grid(field, neg), out.path_for(out_dir / f"{name}.ppm"))
    doc = {
        "angle": args.angle,
        "separation": args.separation,
        "sigma": args.sigma,
        "min_jacobian": jac,
        "lept_positive": jac["lept"] > 0,
        "naive_positive": jac["naive"] > 0,
    }
    print(json.dumps(doc))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="lepreg", description="Centroid-based polyaffine registration.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="register moving labels to reference labels", formatter_class=fmt)
    p.add_argument("--ref", required=True, help="reference label volume (.nii/.nii.gz) or centroid CSV")
    p.add_argument("--mov", required=True, help="moving label volume or centroid CSV")
    p.add_argument("--mode", choices=MODES, default="polyaffine", help="transformation model")
    p.add_argument("--sigma", type=float, default=_DEFAULTS.sigma, help="Gaussian weight width in mm (inf allowed)")
    p.add_argument("--wbg", type=float, default=_DEFAULTS.w_B, help="background weight")
    p.add_argument("--downsample", type=int, default=_DEFAULTS.downsample, help="velocity-field grid factor")
    p.add_argument("--steps", type=int, default=_DEFAULTS.integration_steps, help="scaling-and-squaring steps")
    p.add_argument(
        "--exclude-labels", default="", help="comma-separated labels to ignore; 'brain' adds 2,41,24"
    )
    p.add_argument(
        "--weight-mode",
        choices=[m.value for m in WeightMode],
        default=WeightMode.UNIFORM.value,
        help="centroid weighting in the fits",
    )
    p.add_argument("--grid", default=None, help="volume defining the output grid (needed for CSV input)")
    p.add_argument("--out-aff", required=True, help="background affine, 4x4 text")
    p.add_argument("--out-field", default=None, help="forward displacement field volume")
    p.add_argument("--out-field-inv", default=None, help="inverse displacement field volume")
    p.add_argument("--out-resampled", default=None, help="moving labels resampled onto the reference grid")
    p.add_argument("--threads", type=int, default=0, help=THREADS_HELP)
    p.add_argument("--seed", type=int, default=0, help="recorded only; registration is deterministic")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="Dice overlap and QC flag", formatter_class=fmt)
    p.add_argument("--ref", required=True, help="reference label volume")
    p.add_argument("--mov", required=True, help="(resampled) moving label volume")
    p.add_argument("--labels", default=None, help="comma-separated labels to score (default: all present)")
    p.add_argument("--groups", default=None, help='JSON file {"group": [labels, ...]}')
    p.add_argument("--threshold", type=float, default=QC_THRESHOLD, help="flag when mean Dice is below this")
    p.add_argument("--threads", type=int, default=0, help=THREADS_HELP)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("affdist", help="distances between two affine text files", formatter_class=fmt)
    p.add_argument("a", help="first affine text file")
    p.add_argument("b", help="second affine text file")
    p.add_argument("--threads", type=int, default=0, help=THREADS_HELP)
    p.set_defaults(func=cmd_affdist)

    p = sub.add_parser("phantom", help="write a synthetic phantom pair", formatter_class=fmt)
    p.add_argument("--kind", choices=["affine", "polyaffine"], default="affine", help="truth model")
    p.add_argument("--regions", type=int, default=24, help="number of labelled regions")
    p.add_argument("--size", type=int, default=64, help="voxels per axis")
    p.add_argument("--spacing", type=float, default=2.0, help="voxel size in mm")
    p.add_argument("--magnitude", type=float, default=1.0, help="scales the random transformation caps")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out-ref", required=True, help="reference label volume")
    p.add_argument("--out-mov", required=True, help="moving label volume")
    p.add_argument("--out-truth", default=None, help="affine text (affine kind) or field volume")
    p.add_argument("--threads", type=int, default=0, help=THREADS_HELP)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("fusedemo", help="naive vs log-Euclidean fusion of two rotations", formatter_class=fmt)
    p.add_argument("--angle", type=float, default=2.5, help="rotation angle in rad (applied as +/-)")
    p.add_argument("--separation", type=float, default=20.0, help="distance between rotation centres, mm")
    p.add_argument("--sigma", type=float, default=20.0, help="Gaussian weight width, mm")
    p.add_argument("--size", type=int, default=81, help="grid points per axis")
    p.add_argument("--spacing", type=float, default=1.0, help="grid spacing, mm")
    p.add_argument("--single", action="store_true", help="use only the first rotation")
    p.add_argument("--out-dir", default=".", help="where lept.ppm and naive.ppm are written")
    p.add_argument("--threads", type=int, default=0, help=THREADS_HELP)
    p.set_defaults(func=cmd_fusedemo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().strip(), file=sys.stderr)
        return _fail(EXIT_USAGE, exc)
    if args.threads < 0:
        return _fail(EXIT_USAGE, UsageError("--threads must be >= 0"))
    limits = threadpool_limits(limits=args.threads) if args.threads > 0 else nullcontext()
    try:
        with limits:
            return args.func(args)
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(EXIT_DATA, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except RegistrationError as exc:
        return _fail(EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
