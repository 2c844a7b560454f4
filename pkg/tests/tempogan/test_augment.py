import numpy as np
import pytest

from tempogan.core.augment import (
    AugmentationTransform,
    apply_directional,
    apply_passive,
    augment_bundle,
    augment_sample,
    recompute_derived,
    rotation_matrix,
    sample_rng,
    sample_transform,
)
from tempogan.core.fields import (
    BundleKey,
    FramePair,
    GridField,
    cell_positions,
    curl,
    downsample,
)
from tempogan.data.models import AugmentConfig

FIXED_SCALE = AugmentConfig(scale_range=(1.0, 1.0))


def _linear_velocity(shape, seed=0) -> GridField:
    """v(p) = A p + b; linear interpolation reproduces it exactly."""
    rng = np.random.default_rng(seed)
    dim = len(shape)
    a = rng.normal(size=(dim, dim))
    b = rng.normal(size=dim)
    pos = cell_positions(shape)
    data = np.einsum("ij,j...->i...", a, pos) + b.reshape((-1,) + (1,) * dim)
    return GridField((0.1 * data).astype(np.float32))


def _centred(dim, tile, source, **kwargs) -> AugmentationTransform:
    """A transform that maps the tile centre onto the source centre."""
    base = AugmentationTransform.compose(dim, **kwargs)
    c_tile = np.full(dim, (tile - 1) / 2)
    c_src = np.full(dim, (source - 1) / 2)
    return AugmentationTransform.compose(dim, translation=c_src - base.linear @ c_tile, **kwargs)


# --- Transform algebra ---


def test_rotation_matrix_is_orthonormal():
    r = rotation_matrix(3, 33.0, np.array([1.0, 2.0, -0.5]))
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    np.testing.assert_allclose(rotation_matrix(2, 90.0), [[0, -1], [1, 0]], atol=1e-12)


def test_compose_and_inverse():
    t = AugmentationTransform.compose(2, 1.1, 30.0, (True, False), (3.0, 4.0))
    np.testing.assert_allclose(t.matrix @ t.inverse, np.eye(3), atol=1e-12)
    assert np.linalg.det(t.linear) == pytest.approx(-1.21)
    np.testing.assert_allclose(t.directional, t.linear.T)


def test_map_applies_linear_part_and_translation():
    t = AugmentationTransform.compose(2, 2.0, 0.0, None, (1.0, -1.0))
    np.testing.assert_allclose(t.map(np.array([[1.0], [3.0]])), [[3.0], [5.0]])


# --- Field handling ---


def test_directional_on_constant_field_is_exact():
    """Verify a constant vector becomes L^T v in every cell."""
    value = np.array([0.3, -0.7])
    v = GridField.full((32, 32), tuple(value))
    t = AugmentationTransform.compose(2, 1.1, 30.0, (True, False), (16.0, 16.0))
    out = apply_directional(v, t, (8, 8))
    expected = (t.linear.T @ value).astype(np.float32)
    np.testing.assert_allclose(out.data, expected.reshape(2, 1, 1) * np.ones((2, 8, 8)), atol=1e-6)


@pytest.mark.parametrize(
    "kwargs, value, expected",
    [
        ({"angle": 90.0}, (1.0, 0.0), (0.0, 1.0)),
        ({"angle": -90.0}, (1.0, 0.0), (0.0, -1.0)),
        ({"flips": (True, False)}, (1.0, 2.0), (-1.0, 2.0)),
        ({"flips": (False, True)}, (1.0, 2.0), (1.0, -2.0)),
    ],
)
def test_directional_turns_with_the_content(kwargs, value, expected):
    """Verify a counter-clockwise quarter turn maps (1,0) to (0,1) and reflections negate one axis."""
    v = GridField.full((16, 16), value)
    t = _centred(2, 4, 16, **kwargs)
    out = apply_directional(v, t, (4, 4))
    np.testing.assert_allclose(out.data[:, 0, 0], expected, atol=1e-6)


def test_passive_turns_content_counter_clockwise():
    """Verify a marker on the +x side of the centre ends up on the +y side after 90 degrees."""
    data = np.zeros((1, 17, 17), dtype=np.float32)
    data[0, 12, 8] = 1.0
    t = _centred(2, 17, 17, angle=90.0)
    out = apply_passive(GridField(data), t, (17, 17))
    assert np.unravel_index(np.argmax(out.data[0]), (17, 17)) == (8, 12)


def test_directional_needs_vector_field():
    t = AugmentationTransform.compose(2)
    with pytest.raises(ValueError, match="vector"):
        apply_directional(GridField.zeros((8, 8)), t, (4, 4))


def test_passive_samples_mapped_positions():
    ramp = GridField(cell_positions((32, 32))[0][None].astype(np.float32))
    t = AugmentationTransform.compose(2, 0.9, 45.0, (False, True), (16.0, 12.0))
    out = apply_passive(ramp, t, (8, 8))
    expected = t.map(cell_positions((8, 8)))[0]
    np.testing.assert_allclose(out.data[0], expected, atol=1e-4)


@pytest.mark.parametrize("angle", [90.0, 37.0, -60.0])
def test_vorticity_commutes_with_rotation(angle):
    """Verify recomputing vorticity equals passively rotating it (2D scalar vorticity)."""
    v = _linear_velocity((32, 32))
    t = _centred(2, 12, 32, angle=angle)
    recomputed = recompute_derived({BundleKey.VELOCITY: apply_directional(v, t, (12, 12))})
    rotated = apply_passive(curl(v), t, (12, 12))
    np.testing.assert_allclose(recomputed.data[:, 1:-1, 1:-1], rotated.data[:, 1:-1, 1:-1], atol=1e-3)


def test_reflection_flips_vorticity_sign():
    v = _linear_velocity((32, 32), seed=1)
    t = _centred(2, 10, 32, flips=(True, False))
    recomputed = recompute_derived({BundleKey.VELOCITY: apply_directional(v, t, (10, 10))})
    w = apply_passive(curl(v), t, (10, 10))
    assert np.abs(w.data).max() > 1e-3
    np.testing.assert_allclose(recomputed.data[:, 1:-1, 1:-1], -w.data[:, 1:-1, 1:-1], atol=1e-3)


def test_scale_multiplies_vorticity_by_scale_squared():
    v = _linear_velocity((32, 32), seed=2)
    t = _centred(2, 10, 32, scale=1.1, angle=20.0)
    recomputed = recompute_derived({BundleKey.VELOCITY: apply_directional(v, t, (10, 10))})
    w = apply_passive(curl(v), t, (10, 10))
    np.testing.assert_allclose(recomputed.data[:, 1:-1, 1:-1], 1.21 * w.data[:, 1:-1, 1:-1], atol=1e-3)


def test_vorticity_commutes_with_rotation_3d():
    """Verify the 3D vorticity vector turns with the tile like a directional field."""
    v = _linear_velocity((16, 16, 16), seed=3)
    t = _centred(3, 6, 16, angle=40.0, axis=(1.0, 1.0, 1.0))
    recomputed = recompute_derived({BundleKey.VELOCITY: apply_directional(v, t, (6, 6, 6))})
    rotated = apply_directional(curl(v), t, (6, 6, 6))
    inner = (slice(None), slice(1, -1), slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(recomputed.data[inner], rotated.data[inner], atol=1e-3)


def test_augment_bundle_recomputes_vorticity():
    v = _linear_velocity((32, 32))
    bundle = {
        BundleKey.DENSITY: GridField.full((32, 32), 1.0),
        BundleKey.VELOCITY: v,
        BundleKey.VORTICITY: curl(v),
    }
    t = _centred(2, 8, 32, angle=45.0)
    out = augment_bundle(bundle, t, (8, 8))
    assert set(out) == set(bundle)
    np.testing.assert_allclose(out[BundleKey.VORTICITY].data, curl(out[BundleKey.VELOCITY]).data)


def test_recompute_derived_needs_velocity():
    with pytest.raises(ValueError, match="velocity"):
        recompute_derived({BundleKey.DENSITY: GridField.zeros((8, 8))})


# --- Sampling ---


@pytest.mark.parametrize("dim, tile, source, count", [(2, 16, 40, 10_000), (3, 6, 16, 1_000)])
def test_sampled_transforms_never_leave_the_domain(dim, tile, source, count):
    """Verify sampled transforms keep low- and high-resolution tiles inside their sources."""
    rng = np.random.default_rng(0)
    tile_shape = (tile,) * dim
    source_shape = (source,) * dim
    for _ in range(count):
        t = sample_transform(rng, tile_shape, source_shape, factor=4)
        assert t.corners_inside(tile_shape, source_shape)
        assert t.for_factor(4).corners_inside((4 * tile,) * dim, (4 * source,) * dim)


def test_sample_transform_ranges():
    rng = np.random.default_rng(1)
    cfg = AugmentConfig(scale_range=(0.9, 1.1), angle_range=(-10.0, 10.0))
    for _ in range(200):
        t = sample_transform(rng, (8, 8), (32, 32), config=cfg)
        assert 0.9 <= t.scale <= 1.1
        assert -10.0 <= t.angle <= 10.0


def test_sample_transform_tile_too_large():
    with pytest.raises(ValueError, match="tile exceeds source under transform"):
        sample_transform(np.random.default_rng(0), (20, 20), (16, 16))


def test_disabled_augmentation_is_an_integer_crop():
    rng = np.random.default_rng(2)
    f = GridField(rng.random((1, 24, 24)).astype(np.float32))
    t = sample_transform(rng, (8, 8), (24, 24), config=AugmentConfig(enabled=False))
    np.testing.assert_array_equal(t.linear, np.eye(2))
    tx, ty = (int(v) for v in t.translation)
    assert (tx, ty) == tuple(t.translation)
    out = apply_passive(f, t, (8, 8))
    np.testing.assert_allclose(out.data, f.data[:, tx : tx + 8, ty : ty + 8], atol=1e-6)


def test_for_factor_keeps_resolutions_aligned():
    """Verify the block average of the augmented target equals the augmented input."""
    pos = cell_positions((64, 64))
    hi = GridField((0.5 * pos[0] + pos[1])[None].astype(np.float32))
    lo = downsample(hi, 4)
    t = _centred(2, 8, 16, scale=1.05, angle=25.0, flips=(False, True))
    x = apply_passive(lo, t, (8, 8))
    y = apply_passive(hi, t.for_factor(4), (32, 32))
    np.testing.assert_allclose(downsample(y, 4).data, x.data, atol=1e-3)


def test_augment_sample_triplet_shares_transform():
    rng = np.random.default_rng(3)
    pairs = []
    for k in range(3):
        y = GridField(rng.random((1, 64, 64)).astype(np.float32))
        x = {
            BundleKey.DENSITY: downsample(y, 4),
            BundleKey.VELOCITY: GridField.full((16, 16), (0.1 * k, 0.0)),
        }
        pairs.append(FramePair(k, x, {BundleKey.DENSITY: y}, 4))
    out = augment_sample(pairs, (8, 8), sample_rng(0, 0, 0), FIXED_SCALE, vorticity=True)
    assert [p.index for p in out] == [0, 1, 2]
    assert out[0].x[BundleKey.DENSITY].shape == (8, 8)
    assert out[0].y[BundleKey.DENSITY].shape == (32, 32)
    assert BundleKey.VORTICITY in out[0].x
    # the same transform turns each constant velocity the same way
    v1 = out[1].x[BundleKey.VELOCITY].data[:, 0, 0]
    v2 = out[2].x[BundleKey.VELOCITY].data[:, 0, 0]
    np.testing.assert_allclose(2 * v1, v2, atol=1e-6)


def test_augment_sample_needs_frames():
    with pytest.raises(ValueError, match="no frames"):
        augment_sample([], (8, 8), sample_rng(0, 0, 0))


def test_sample_rng_streams():
    a = sample_rng(1, 0, 5, 2).random(3)
    b = sample_rng(1, 0, 5, 2).random(3)
    c = sample_rng(1, 1, 5, 2).random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
