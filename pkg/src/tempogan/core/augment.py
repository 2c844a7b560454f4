"""Physics-aware augmentation of training tiles.

A transform maps every output tile position ``p`` to a source position
``L p + t`` with ``L = s R^T F`` (uniform scale, inverse rotation, axis
reflections), so the content turns by ``R``.
Passive fields are resampled. Directional fields are resampled and their
values multiplied by ``L^T = s F R``, which turns vectors with the image
content and scales magnitudes by ``s``; vorticity therefore commutes with the
transform. Derived fields are recomputed from the augmented velocity. Time is
never transformed.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from tempogan.core.fields import (
    Bundle,
    BundleKey,
    FramePair,
    GridField,
    cell_positions,
    curl,
    sample_linear,
)
from tempogan.data.models import AugmentConfig

logger = logging.getLogger(__name__)

CORNER_TOLERANCE = 1e-6


class FieldKind(str, Enum):
    PASSIVE = "passive"
    DIRECTIONAL = "directional"
    DERIVED = "derived"


BUNDLE_KINDS: dict[str, FieldKind] = {
    BundleKey.DENSITY: FieldKind.PASSIVE,
    BundleKey.VELOCITY: FieldKind.DIRECTIONAL,
    BundleKey.VORTICITY: FieldKind.DERIVED,
}


def rotation_matrix(dim: int, angle: float, axis: np.ndarray | None = None) -> np.ndarray:
    """Counter-clockwise rotation by ``angle`` degrees (about ``axis`` in 3D)."""
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    if dim == 2:
        return np.array([[c, -s], [s, c]])
    k = np.array([0.0, 0.0, 1.0]) if axis is None else np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(theta * k / np.linalg.norm(k)).as_matrix()


@dataclass(frozen=True, eq=False)
class AugmentationTransform:
    """Affine map from output tile positions to source positions."""

    linear: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    angle: float = 0.0
    flips: tuple[bool, ...] = ()
    axis: tuple[float, ...] | None = None
    _inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        object.__setattr__(self, "_inverse", np.linalg.inv(self.matrix))

    @classmethod
    def compose(
        cls,
        dim: int,
        scale: float = 1.0,
        angle: float = 0.0,
        flips: Sequence[bool] | None = None,
        translation: Sequence[float] | None = None,
        axis: Sequence[float] | None = None,
    ) -> AugmentationTransform:
        """Builds ``L = s R(angle)^T F`` from its components.

        ``angle`` turns the tile content counter-clockwise, so source positions
        are looked up through the opposite rotation. Vector values then turn
        with ``L^T = s F R(angle)``, which agrees with the content.
        """
        flips = tuple(bool(f) for f in (flips or (False,) * dim))
        reflect = np.diag([-1.0 if f else 1.0 for f in flips])
        rot = rotation_matrix(dim, angle, None if axis is None else np.asarray(axis))
        linear = scale * rot.T @ reflect
        t = np.zeros(dim) if translation is None else np.asarray(translation, dtype=np.float64)
        return cls(
            linear, t, scale, angle, flips, None if axis is None else tuple(float(a) for a in axis)
        )

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The homogeneous ``(d+1) x (d+1)`` matrix."""
        m = np.eye(self.dim + 1)
        m[: self.dim, : self.dim] = self.linear
        m[: self.dim, self.dim] = self.translation
        return m

    @property
    def directional(self) -> np.ndarray:
        """Matrix applied to vector values: ``L^T``."""
        return self.linear.T

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    def map(self, p: np.ndarray) -> np.ndarray:
        """Applies the transform to positions of shape ``(d, ...)``."""
        p = np.asarray(p, dtype=np.float64)
        flat = p.reshape(self.dim, -1)
        out = self.linear @ flat + self.translation[:, None]
        return out.reshape(p.shape)

    def for_factor(self, factor: int) -> AugmentationTransform:
        """The same transform expressed on a grid refined by ``factor``.

        Low-res cell ``i`` covers high-res centres around ``f i + (f - 1) / 2``,
        which gives ``t_hi = f t + (I - L) c`` with ``c = (f - 1) / 2``.
        """
        c = np.full(self.dim, (factor - 1) / 2.0)
        t = factor * self.translation + (np.eye(self.dim) - self.linear) @ c
        return AugmentationTransform(
            self.linear.copy(), t, self.scale, self.angle, self.flips, self.axis
        )

    def corners_inside(self, tile_shape: Sequence[int], source_shape: Sequence[int]) -> bool:
        corners = _corners(tile_shape)
        mapped = self.linear @ corners + self.translation[:, None]
        upper = np.asarray(source_shape, dtype=np.float64)[:, None] - 1
        return bool(np.all(mapped >= -CORNER_TOLERANCE) and np.all(mapped <= upper + CORNER_TOLERANCE))


def _corners(tile_shape: Sequence[int]) -> np.ndarray:
    return np.array(
        list(itertools.product(*[(0.0, float(n - 1)) for n in tile_shape]))
    ).T


def _translation_interval(
    linear: np.ndarray, tile_shape: Sequence[int], source_shape: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    mapped = linear @ _corners(tile_shape)
    lo = -mapped.min(axis=1)
    hi = (np.asarray(source_shape, dtype=np.float64) - 1) - mapped.max(axis=1)
    return lo, hi


def sample_transform(
    rng: np.random.Generator,
    tile_shape: Sequence[int],
    source_shape: Sequence[int],
    factor: int = 1,
    config: AugmentConfig = AugmentConfig(),
) -> AugmentationTransform:
    """Draws a random transform whose tile never reads outside the source.

    With ``factor > 1`` the translation also keeps the high-resolution tile
    (``factor * tile_shape`` inside ``factor * source_shape``) in bounds.

    Raises:
        ValueError: "tile exceeds source under transform" when no translation fits.
    """
    dim = len(tile_shape)
    if config.enabled:
        scale = float(rng.uniform(*config.scale_range))
        angle = float(rng.uniform(*config.angle_range))
        flips = tuple(bool(b) for b in rng.random(dim) < 0.5) if config.flip else (False,) * dim
        axis = None
        if dim == 3:
            a = rng.normal(size=3)
            axis = tuple(float(x) for x in a / (np.linalg.norm(a) + 1e-12))
    else:
        scale, angle, flips, axis = 1.0, 0.0, (False,) * dim, None
    base = AugmentationTransform.compose(dim, scale, angle, flips, None, axis)

    lo, hi = _translation_interval(base.linear, tile_shape, source_shape)
    if factor > 1:
        c = np.full(dim, (factor - 1) / 2.0)
        k = (np.eye(dim) - base.linear) @ c
        lo_hi, hi_hi = _translation_interval(
            base.linear, [n * factor for n in tile_shape], [n * factor for n in source_shape]
        )
        lo = np.maximum(lo, (lo_hi - k) / factor)
        hi = np.minimum(hi, (hi_hi - k) / factor)
    if not config.enabled:
        lo, hi = np.ceil(lo - CORNER_TOLERANCE), np.floor(hi + CORNER_TOLERANCE)
    if np.any(hi < lo):
        raise ValueError("tile exceeds source under transform")

    if config.enabled:
        t = lo + rng.random(dim) * (hi - lo)
    else:
        t = np.array([float(rng.integers(int(a), int(b) + 1)) for a, b in zip(lo, hi)])
    transform = AugmentationTransform(base.linear, t, scale, angle, flips, axis)
    if not transform.corners_inside(tile_shape, source_shape):
        raise ValueError("tile exceeds source under transform")
    return transform


def apply_passive(
    f: GridField, transform: AugmentationTransform, tile_shape: Sequence[int]
) -> GridField:
    positions = transform.map(cell_positions(tuple(tile_shape)))
    return GridField(sample_linear(f, positions))


def apply_directional(
    v: GridField, transform: AugmentationTransform, tile_shape: Sequence[int]
) -> GridField:
    """Resamples a vector field and turns its values with the tile content."""
    if not v.is_vector:
        raise ValueError("directional augmentation needs a vector field")
    sampled = sample_linear(v, transform.map(cell_positions(tuple(tile_shape))))
    rotated = np.einsum("ij,j...->i...", transform.directional, sampled.astype(np.float64))
    return GridField(rotated.astype(np.float32))


def recompute_derived(bundle: Bundle) -> GridField:
    """Vorticity of an (augmented) bundle's velocity."""
    if BundleKey.VELOCITY not in bundle:
        raise ValueError("derived fields need an augmented velocity")
    return curl(bundle[BundleKey.VELOCITY])


def augment_bundle(
    bundle: Bundle,
    transform: AugmentationTransform,
    tile_shape: Sequence[int],
    derived: bool = False,
) -> Bundle:
    """Transforms every passive and directional entry; derived entries are rebuilt."""
    out: Bundle = {}
    for key, fld in bundle.items():
        kind = BUNDLE_KINDS[BundleKey(key)]
        if kind is FieldKind.PASSIVE:
            out[key] = apply_passive(fld, transform, tile_shape)
        elif kind is FieldKind.DIRECTIONAL:
            out[key] = apply_directional(fld, transform, tile_shape)
    if derived or BundleKey.VORTICITY in bundle:
        out[BundleKey.VORTICITY] = recompute_derived(out)
    return out


def augment_sample(
    pairs: Sequence[FramePair],
    tile_shape: Sequence[int],
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
    vorticity: bool = False,
) -> list[FramePair]:
    """Cuts one consistently transformed tile out of one frame or a triplet.

    The low-resolution input and the high-resolution target share the
    transform; the target uses :meth:`AugmentationTransform.for_factor`.
    """
    if not pairs:
        raise ValueError("no frames to augment")
    first = pairs[0]
    factor = first.scale
    source = first.x[BundleKey.DENSITY].shape
    transform = sample_transform(rng, tile_shape, source, factor, config)
    hi_transform = transform.for_factor(factor)
    hi_tile = [n * factor for n in tile_shape]
    out = []
    for pair in pairs:
        x = augment_bundle(pair.x, transform, tile_shape, derived=vorticity)
        y = augment_bundle(pair.y, hi_transform, hi_tile)
        out.append(FramePair(pair.index, x, y, factor, pair.sim, dict(pair.meta)))
    return out


def sample_rng(seed: int, stream: int, counter: int, *keys: int) -> np.random.Generator:
    """Independent generator per sample so results do not depend on scheduling."""
    return np.random.default_rng([seed, stream, counter, *keys])
