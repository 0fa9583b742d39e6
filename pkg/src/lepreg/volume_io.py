"""Minimal NIfTI-1 reading/writing and resampling of volumes.

Only the single-file ``n+1`` layout is handled. Orientation comes from the
s-form rows when ``sform_code >= 1`` and from ``diag(pixdim)`` otherwise;
q-form quaternions are ignored. Files ending in ``.gz`` are transparently
(de)compressed.
"""

from __future__ import annotations

import gzip
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import CorruptFileError, InvalidArgumentError, UnsupportedFormatError
from .grid import GridSpec, sample_linear
from .linalg import AffineTransform

log = logging.getLogger(__name__)

HEADER_SIZE = 348
VOX_OFFSET = 352

# fmt: off
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"),
    ("extents", "i4"), ("session_error", "i2"), ("regular", "S1"),
    ("dim_info", "u1"), ("dim", "i2", (8,)), ("intent_p1", "f4"),
    ("intent_p2", "f4"), ("intent_p3", "f4"), ("intent_code", "i2"),
    ("datatype", "i2"), ("bitpix", "i2"), ("slice_start", "i2"),
    ("pixdim", "f4", (8,)), ("vox_offset", "f4"), ("scl_slope", "f4"),
    ("scl_inter", "f4"), ("slice_end", "i2"), ("slice_code", "u1"),
    ("xyzt_units", "u1"), ("cal_max", "f4"), ("cal_min", "f4"),
    ("slice_duration", "f4"), ("toffset", "f4"), ("glmax", "i4"),
    ("glmin", "i4"), ("descrip", "S80"), ("aux_file", "S24"),
    ("qform_code", "i2"), ("sform_code", "i2"), ("quatern_b", "f4"),
    ("quatern_c", "f4"), ("quatern_d", "f4"), ("qoffset_x", "f4"),
    ("qoffset_y", "f4"), ("qoffset_z", "f4"), ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)), ("srow_z", "f4", (4,)), ("intent_name", "S16"),
    ("magic", "S4"),
]
# fmt: on
HEADER_DTYPE = np.dtype(_HEADER_FIELDS)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_CODES = {dt: code for code, dt in DATATYPES.items()}


@dataclass(frozen=True, eq=False)
class Volume:
    """Raster plus its 4x4 voxel-to-world affine.

    The first three axes are spatial; vector images carry two extra axes
    (``[X, Y, Z, 1, C]``) as in the NIfTI convention.
    """

    data: NDArray
    affine: NDArray[np.float64]

    def __post_init__(self):
        aff = np.array(self.affine, dtype=float)
        if aff.shape != (4, 4):
            raise InvalidArgumentError(f"volume affine must be 4x4, got {aff.shape}")
        if abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise InvalidArgumentError("volume affine is not invertible")
        data = np.asarray(self.data)
        if data.ndim < 3:
            raise InvalidArgumentError(f"volume data must be at least 3-D, got {data.ndim}-D")
        object.__setattr__(self, "affine", aff)
        object.__setattr__(self, "data", data)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.data.shape[:3], self.affine)


class LabelVolume(Volume):
    """Integer label raster; 0 is background."""

    def __post_init__(self):
        super().__post_init__()
        if not np.issubdtype(self.data.dtype, np.integer):
            raise InvalidArgumentError(f"label data must be integer, got {self.data.dtype}")
        if self.data.size and self.data.min() < 0:
            raise InvalidArgumentError("labels must be nonnegative")


class ScalarVolume(Volume):
    """Real-valued raster (intensities, vector fields)."""


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------


@contextmanager
def _open(path: Path, mode: str):
    if path.suffix != ".gz":
        with open(path, mode) as fh:
            yield fh
        return
    # empty name and zero mtime keep compressed output byte-reproducible
    with open(path, mode) as raw, gzip.GzipFile(filename="", mode=mode, fileobj=raw, mtime=0) as fh:
        yield fh


def _label_dtype(data: NDArray) -> np.dtype:
    hi = int(data.max()) if data.size else 0
    for dt in (np.uint8, np.int16, np.int32):
        if hi <= np.iinfo(dt).max:
            return np.dtype(dt)
    raise UnsupportedFormatError(f"label value {hi} does not fit in int32")


def make_header(shape, affine, dtype: np.dtype) -> np.ndarray:
    """Little-endian NIfTI-1 header for a single-file image."""
    if not 3 <= len(shape) <= 7:
        raise UnsupportedFormatError(f"cannot store a {len(shape)}-D array")
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = len(shape)
    dim[1 : len(shape) + 1] = shape
    hdr["dim"] = dim
    hdr["datatype"] = _CODES[np.dtype(dtype)]
    hdr["bitpix"] = np.dtype(dtype).itemsize * 8
    pixdim = np.ones(8, dtype=np.float32)
    pixdim[1:4] = np.linalg.norm(affine[:3, :3], axis=0)
    if len(shape) == 5 and shape[4] > 1:
        hdr["intent_code"] = 1007  # NIFTI_INTENT_VECTOR
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["magic"] = b"n+1\x00"
    return hdr


def write_volume(volume: Volume, path: str | Path, dtype=None) -> None:
    """Write ``volume`` as little-endian NIfTI-1 (``.nii`` or ``.nii.gz``).

    Without an explicit ``dtype`` labels get the smallest of uint8/int16/int32
    that holds their maximum, everything else float32.

    The s-form is stored in float32, so only affines exactly representable in
    float32 survive a round trip bit for bit.
    """
    path = Path(path)
    data = np.asarray(volume.data)
    if dtype is None:
        dtype = _label_dtype(data) if isinstance(volume, LabelVolume) else np.dtype(np.float32)
    dtype = np.dtype(dtype)
    if dtype not in _CODES:
        raise UnsupportedFormatError(f"unsupported payload dtype {dtype}")
    hdr = make_header(data.shape, volume.affine, dtype)
    payload = np.asarray(data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    try:
        with _open(path, "wb") as fh:
            fh.write(hdr.tobytes())
            fh.write(b"\x00\x00\x00\x00")
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_header(raw: bytes) -> tuple[np.ndarray, str]:
    """Parse the header; returns it with its byte order (``'<'`` or ``'>'``)."""
    if len(raw) < HEADER_SIZE:
        raise CorruptFileError(f"file shorter than the {HEADER_SIZE}-byte header")
    for order in "<>":
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(order))[0]
        if hdr["sizeof_hdr"] == HEADER_SIZE:
            return hdr, order
    raise UnsupportedFormatError("sizeof_hdr is not 348 in either byte order")


def header_affine(hdr) -> NDArray[np.float64]:
    if hdr["sform_code"] >= 1:
        aff = np.eye(4)
        aff[0] = hdr["srow_x"]
        aff[1] = hdr["srow_y"]
        aff[2] = hdr["srow_z"]
        return aff
    pix = np.abs(np.asarray(hdr["pixdim"][1:4], dtype=float))
    pix[pix == 0] = 1.0
    return np.diag(np.append(pix, 1.0))


def read_volume(path: str | Path) -> LabelVolume | ScalarVolume:
    """Read a NIfTI-1 file into a :class:`LabelVolume` or :class:`ScalarVolume`.

    Integer payloads become label volumes, floating payloads scalar volumes.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with _open(path, "rb") as fh:
        try:
            raw = fh.read()
        except (OSError, EOFError) as exc:
            raise CorruptFileError(f"{path}: {exc}") from exc
    hdr, order = read_header(raw)
    if hdr["magic"] not in (b"n+1", b"n+1\x00"):
        raise UnsupportedFormatError(f"{path}: magic {hdr['magic']!r}, expected 'n+1'")
    ndim = int(hdr["dim"][0])
    if not 3 <= ndim <= 7:
        raise UnsupportedFormatError(f"{path}: dim[0]={ndim} (need 3..7)")
    shape = tuple(int(v) for v in hdr["dim"][1 : ndim + 1])
    if any(s < 1 for s in shape):
        raise UnsupportedFormatError(f"{path}: nonpositive dim entries {shape}")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedFormatError(f"{path}: datatype code {code} not supported")
    dtype = DATATYPES[code].newbyteorder(order)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise CorruptFileError(
            f"{path}: payload truncated ({len(raw) - offset} of {nbytes} bytes)"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))
    slope = float(hdr["scl_slope"])
    if slope not in (0.0, 1.0) and np.isfinite(slope):
        log.warning("%s: scl_slope=%g ignored; data returned unscaled", path, slope)
    affine = header_affine(hdr)
    if np.issubdtype(data.dtype, np.integer):
        return LabelVolume(data, affine)
    return ScalarVolume(data, affine)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _mapped_world(transform, target_grid: GridSpec) -> NDArray[np.float64]:
    """T(x) for every target voxel centre x."""
    x = target_grid.world_coords()
    if isinstance(transform, AffineTransform):
        return transform(x)
    # displacement field: T(x) = x + u(x)
    from .fusion import sample_field

    return x + sample_field(transform, x)


def resample_labels(moving: LabelVolume, transform, target_grid: GridSpec) -> LabelVolume:
    """Nearest-neighbour backward resampling of a label volume.

    ``transform`` maps target (reference) world coordinates to moving world
    coordinates; it is either an :class:`AffineTransform` or a displacement
    field. Target voxels whose source falls outside the moving grid get 0.
    """
    y = _mapped_world(transform, target_grid)
    vox = moving.grid.world_to_voxel_points(y)
    idx = np.floor(vox + 0.5).astype(np.int64)
    shape = np.array(moving.data.shape[:3])
    inside = np.all((idx >= 0) & (idx < shape), axis=-1)
    out = np.zeros(target_grid.dims, dtype=moving.data.dtype)
    sel = idx[inside]
    out[inside] = moving.data[sel[:, 0], sel[:, 1], sel[:, 2]]
    return LabelVolume(out, target_grid.voxel_to_world)


def resample_scalar(moving: ScalarVolume, transform, target_grid: GridSpec) -> ScalarVolume:
    """Trilinear backward resampling; samples outside the moving grid fade to 0."""
    y = _mapped_world(transform, target_grid)
    vox = moving.grid.world_to_voxel_points(y)
    data = np.asarray(moving.data, dtype=float)
    out = sample_linear(data, vox, clamp=False)
    return ScalarVolume(out, target_grid.voxel_to_world)
