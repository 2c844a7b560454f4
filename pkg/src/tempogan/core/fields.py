"""Uniform-grid field containers and the numerical primitives built on them.

Fields are cell-centered and collocated: cell ``i`` along an axis has its
center at continuous position ``i``. Data is stored channels-first as
``(channels, *shape)`` float32. Vector channel ``k`` is the component along
spatial axis ``k``; in 2D axis 0 is ``x`` and axis 1 is ``y`` (up).

Velocities are measured in cells per frame at the field's own resolution, so
resampling between resolutions rescales their values.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

ResampleKind = Literal["passive", "velocity"]


@dataclass(frozen=True)
class GridField:
    """A scalar or vector field on a uniform cell-centered grid."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim not in (3, 4):
            raise ValueError(
                f"field data must be (channels, *shape) with 2 or 3 spatial axes, got {data.shape}"
            )
        dim = data.ndim - 1
        if data.shape[0] not in (1, dim):
            raise ValueError(
                f"a {dim}D field has 1 or {dim} channels, got {data.shape[0]}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        return self.data.ndim - 1

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.channels == self.dim and self.dim > 1

    @classmethod
    def zeros(cls, shape: tuple[int, ...], channels: int = 1) -> GridField:
        return cls(np.zeros((channels, *shape), dtype=np.float32))

    @classmethod
    def full(cls, shape: tuple[int, ...], value: float | tuple[float, ...]) -> GridField:
        values = np.atleast_1d(np.asarray(value, dtype=np.float32))
        data = np.empty((values.size, *shape), dtype=np.float32)
        data[...] = values.reshape((-1,) + (1,) * len(shape))
        return cls(data)

    def scalar(self) -> np.ndarray:
        """Returns the single channel of a scalar field as a ``shape`` array."""
        if self.channels != 1:
            raise ValueError("not a scalar field")
        return self.data[0]


class BundleKey(str, Enum):
    """Names of the fields carried in a frame bundle."""

    DENSITY = "density"
    VELOCITY = "velocity"
    VORTICITY = "vorticity"


Bundle = dict[str, GridField]


@dataclass(frozen=True)
class FramePair:
    """One time step's low-resolution input bundle and high-resolution target bundle."""

    index: int
    x: Bundle
    y: Bundle
    scale: int = 4
    sim: int = 0
    meta: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lo = self.x[BundleKey.DENSITY].shape
        hi = self.y[BundleKey.DENSITY].shape
        if tuple(n * self.scale for n in lo) != hi:
            raise ValueError(
                f"target shape {hi} is not {self.scale} x input shape {lo}"
            )


def sample_linear(f: GridField, p: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a field at continuous positions.

    Args:
        f: The field to sample.
        p: Positions in cell-index coordinates, shape ``(d,)`` or ``(d, *points)``.
            Positions outside ``[0, n - 1]`` are clamped to the edge.

    Returns:
        Sampled values, shape ``(channels,)`` or ``(channels, *points)``.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] != f.dim:
        raise ValueError(f"positions have {p.shape[0]} components, field is {f.dim}D")
    single = p.ndim == 1
    coords = p.reshape(f.dim, -1).copy()
    for axis, n in enumerate(f.shape):
        np.clip(coords[axis], 0.0, n - 1, out=coords[axis])
    out = np.stack(
        [
            ndimage.map_coordinates(
                f.data[c].astype(np.float64), coords, order=1, mode="nearest"
            )
            for c in range(f.channels)
        ]
    ).astype(np.float32)
    if single:
        return out[:, 0]
    return out.reshape((f.channels, *p.shape[1:]))


def cell_positions(shape: tuple[int, ...]) -> np.ndarray:
    """Cell-center positions of a grid, shape ``(d, *shape)`` float64."""
    return np.stack(
        np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    )


def curl(v: GridField) -> GridField:
    """Vorticity of a velocity field.

    2D yields one channel ``dv_y/dx - dv_x/dy``; 3D yields the full curl.
    Central differences in the interior, one-sided at the boundary.
    """
    if not v.is_vector:
        raise ValueError("curl needs a vector field")
    if min(v.shape) < 3:
        raise ValueError("degenerate grid")
    comps = v.data.astype(np.float64)

    def d(c: int, axis: int) -> np.ndarray:
        return np.gradient(comps[c], axis=axis)

    if v.dim == 2:
        w = (d(1, 0) - d(0, 1))[None]
    else:
        w = np.stack(
            [
                d(2, 1) - d(1, 2),
                d(0, 2) - d(2, 0),
                d(1, 0) - d(0, 1),
            ]
        )
    return GridField(w.astype(np.float32))


def divergence(v: GridField) -> np.ndarray:
    """Central-difference divergence with zero velocity beyond the walls.

    This is the operator the pressure projection drives to zero.
    """
    if not v.is_vector:
        raise ValueError("divergence needs a vector field")
    out = np.zeros(v.shape, dtype=np.float64)
    for axis in range(v.dim):
        comp = v.data[axis].astype(np.float64)
        pad = [(0, 0)] * v.dim
        pad[axis] = (1, 1)
        padded = np.pad(comp, pad)
        hi = [slice(None)] * v.dim
        lo = [slice(None)] * v.dim
        hi[axis] = slice(2, None)
        lo[axis] = slice(None, -2)
        out += 0.5 * (padded[tuple(hi)] - padded[tuple(lo)])
    return out


def gradient_magnitude(f: GridField) -> np.ndarray:
    """Per-cell magnitude of the gradient of a scalar field."""
    rho = f.scalar().astype(np.float64)
    grads = np.gradient(rho)
    return np.sqrt(sum(g * g for g in grads))


def downsample(f: GridField, factor: int, kind: ResampleKind = "passive") -> GridField:
    """Block average over ``factor**d`` cells.

    Velocities are additionally divided by ``factor`` so they stay in cells
    per frame at the coarse resolution.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if any(n % factor for n in f.shape):
        raise ValueError(f"shape {f.shape} is not divisible by {factor}")
    split: list[int] = [f.channels]
    for n in f.shape:
        split += [n // factor, factor]
    blocks = f.data.astype(np.float64).reshape(split)
    out = blocks.mean(axis=tuple(range(2, 2 + 2 * f.dim, 2)))
    if kind == "velocity":
        out = out / factor
    return GridField(out.astype(np.float32))


def upsample_nn(f: GridField, factor: int, kind: ResampleKind = "passive") -> GridField:
    """Nearest-neighbor replication; velocities are multiplied by ``factor``."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = f.data
    for axis in range(1, f.dim + 1):
        out = np.repeat(out, factor, axis=axis)
    if kind == "velocity":
        out = out * np.float32(factor)
    return GridField(out)


def stencil_bounds(
    f: np.ndarray, coords: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Min and max of the ``2**d`` cells surrounding each continuous position.

    Args:
        f: A scalar array of shape ``shape``.
        coords: Clamped positions, shape ``(d, *points)``.
    """
    shape = f.shape
    base = [np.clip(np.floor(coords[a]).astype(np.int64), 0, shape[a] - 1) for a in range(len(shape))]
    lo = np.full(coords.shape[1:], np.inf)
    hi = np.full(coords.shape[1:], -np.inf)
    for corner in itertools.product((0, 1), repeat=len(shape)):
        idx = tuple(
            np.minimum(base[a] + corner[a], shape[a] - 1) for a in range(len(shape))
        )
        vals = f[idx]
        lo = np.minimum(lo, vals)
        hi = np.maximum(hi, vals)
    return lo, hi
