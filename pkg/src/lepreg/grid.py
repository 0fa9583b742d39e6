"""Regular sampling grids and multilinear sampling on them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Grid shape plus the homogeneous voxel-index -> world-mm affine."""

    dims: tuple[int, ...]
    voxel_to_world: NDArray[np.float64]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        M = np.array(self.voxel_to_world, dtype=float)
        if len(dims) not in (2, 3) or any(d < 1 for d in dims):
            raise InvalidArgumentError(f"grid dims must be 2 or 3 positive ints, got {dims}")
        if M.shape != (len(dims) + 1,) * 2:
            raise InvalidArgumentError(
                f"voxel_to_world must be {len(dims) + 1}x{len(dims) + 1}, got {M.shape}"
            )
        if abs(np.linalg.det(M[:-1, :-1])) < 1e-12:
            raise InvalidArgumentError("voxel_to_world is not invertible")
        M.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_to_world", M)

    @classmethod
    def centered(cls, dims, spacing=1.0) -> GridSpec:
        """Axis-aligned grid whose centre sits at the world origin."""
        dims = tuple(int(d) for d in dims)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(dims),))
        M = np.eye(len(dims) + 1)
        M[:-1, :-1] = np.diag(spacing)
        M[:-1, -1] = -0.5 * (np.array(dims) - 1) * spacing
        return cls(dims, M)

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def spacing(self) -> NDArray[np.float64]:
        return np.linalg.norm(self.voxel_to_world[:-1, :-1], axis=0)

    def same_as(self, other: GridSpec) -> bool:
        return self.dims == other.dims and np.array_equal(
            self.voxel_to_world, other.voxel_to_world
        )

    def voxel_to_world_points(self, idx: ArrayLike) -> NDArray[np.float64]:
        idx = np.asarray(idx, dtype=float)
        M = self.voxel_to_world
        return idx @ M[:-1, :-1].T + M[:-1, -1]

    def world_to_voxel_points(self, x: ArrayLike) -> NDArray[np.float64]:
        Minv = np.linalg.inv(self.voxel_to_world)
        x = np.asarray(x, dtype=float)
        return x @ Minv[:-1, :-1].T + Minv[:-1, -1]

    def world_coords(self) -> NDArray[np.float64]:
        """World position of every voxel centre, shape ``dims + (dim,)``."""
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in self.dims], indexing="ij"), axis=-1)
        return self.voxel_to_world_points(idx)

    def downsample(self, factor: int) -> GridSpec:
        """Coarser grid with spacing multiplied by ``factor``.

        Index 0 coincides with index 0 of this grid and the coarse grid
        extends far enough to enclose the last fine voxel, so that upsampling
        never needs to extrapolate.
        """
        factor = int(factor)
        if factor < 1:
            raise InvalidArgumentError(f"downsample factor must be >= 1, got {factor}")
        if factor == 1:
            return self
        dims = tuple(math.ceil((n - 1) / factor) + 1 for n in self.dims)
        S = np.eye(self.dim + 1)
        S[:-1, :-1] *= factor
        return GridSpec(dims, self.voxel_to_world @ S)

    def interior_mask(self, fraction: float = 0.8) -> NDArray[np.bool_]:
        """Boolean mask of the central ``fraction`` of the grid along each axis."""
        masks = []
        for n in self.dims:
            i = np.arange(n)
            margin = 0.5 * (1.0 - fraction) * (n - 1)
            masks.append((i >= margin) & (i <= n - 1 - margin))
        out = masks[0]
        for m in masks[1:]:
            out = out[..., None] & m
        return out


def sample_linear(
    data: NDArray, voxel_coords: NDArray, *, clamp: bool = True
) -> NDArray[np.float64]:
    """Multilinear interpolation of ``data`` at fractional voxel coordinates.

    ``data`` has shape ``dims`` (scalar) or ``dims + (c,)`` (vector);
    ``voxel_coords`` has a trailing axis of length ``len(dims)``. Samples
    falling outside the grid take the nearest edge value when ``clamp`` is
    true and are blended with zero otherwise.
    """
    coords = np.asarray(voxel_coords, dtype=float)
    ndim = coords.shape[-1]
    flat = coords.reshape(-1, ndim).T
    mode = "nearest" if clamp else "constant"
    if data.ndim == ndim:
        out = ndimage.map_coordinates(data, flat, order=1, mode=mode, cval=0.0)
        return out.reshape(coords.shape[:-1])
    comps = [
        ndimage.map_coordinates(data[..., c], flat, order=1, mode=mode, cval=0.0)
        for c in range(data.shape[-1])
    ]
    return np.stack(comps, axis=-1).reshape(coords.shape[:-1] + (data.shape[-1],))
