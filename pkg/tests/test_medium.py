import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mediasplat.errors import OutOfRangePosition, UnknownMode
from mediasplat.medium import (CORNERS, FIELDS, MODES, MediumGrid, evaluate_rays, homogeneous_estimate,
                               interpolate_coeffs, medium_backward, medium_eval, medium_variant,
                               normalize_position, trilinear_weights)
from mediasplat.scene import Bounds

from conftest import random_medium

BOUNDS = Bounds([-1, -2, 0], [3, 2, 8])
npos_st = arrays(float, 3, elements=st.floats(-1, 1))


def unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_position(BOUNDS, BOUNDS.center), 0, atol=1e-15)
    np.testing.assert_allclose(normalize_position(BOUNDS, BOUNDS.hi), 1)
    np.testing.assert_allclose(normalize_position(BOUNDS, [100, -100, 4]), [1, -1, 0])


def test_partition_of_unity_grid():
    g = np.linspace(-1, 1, 9)
    pts = np.stack(np.meshgrid(g, g, g), -1).reshape(-1, 3)
    w = trilinear_weights(pts)
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(-1) - 1)) < 1e-12


def test_corner_exactness(rng):
    m = random_medium(rng, BOUNDS)
    for i, c in enumerate(CORNERS):
        for f in FIELDS:
            assert np.max(np.abs(interpolate_coeffs(m, c, f) - getattr(m, f)[i])) < 1e-12


def test_center_is_mean(rng):
    m = random_medium(rng, BOUNDS)
    for f in FIELDS:
        np.testing.assert_allclose(interpolate_coeffs(m, np.zeros(3), f), getattr(m, f).mean(0), atol=1e-12)


@given(npos_st)
def test_constant_corners(p):
    m = MediumGrid.homogeneous(BOUNDS)
    m.c_med[:] = np.arange(48.0).reshape(16, 3)
    np.testing.assert_allclose(interpolate_coeffs(m, p, "c_med"), m.c_med[0], atol=1e-12)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_edge_affine(y, t):
    m = random_medium(np.random.default_rng(5), BOUNDS)
    a = interpolate_coeffs(m, [-1, y, 1], "sigma_bs")
    b = interpolate_coeffs(m, [1, y, 1], "sigma_bs")
    mid = interpolate_coeffs(m, [t, y, 1], "sigma_bs")
    np.testing.assert_allclose(mid, a + (t + 1) / 2 * (b - a), atol=1e-12)


def test_out_of_range():
    with pytest.raises(OutOfRangePosition):
        interpolate_coeffs(MediumGrid.homogeneous(BOUNDS), [1.1, 0, 0], "c_med")


def test_zero_coefficients():
    m = MediumGrid.homogeneous(BOUNDS)
    for f in FIELDS:
        getattr(m, f)[:] = 0
    s = medium_eval(m, [0, 0, 1], [0, 0, 1.0])
    np.testing.assert_allclose(s.c_med, 0.5)
    np.testing.assert_allclose(s.sigma_att, np.log(2))
    np.testing.assert_allclose(s.sigma_bs, np.log(2))


def test_homogeneous_values(rng):
    m = MediumGrid.homogeneous(BOUNDS, [0.1, 0.35, 0.45], [0.09, 0.03, 0.02], [0.016, 0.024, 0.03])
    s, _ = evaluate_rays(m, rng.uniform(BOUNDS.lo, BOUNDS.hi), unit(rng, 20))
    np.testing.assert_allclose(s.c_med, np.tile([0.1, 0.35, 0.45], (20, 1)), atol=1e-12)
    np.testing.assert_allclose(s.sigma_att, np.tile([0.09, 0.03, 0.02], (20, 1)), atol=1e-12)
    est = homogeneous_estimate(m, rng.uniform(BOUNDS.lo, BOUNDS.hi, (5, 3)))
    np.testing.assert_allclose(est.sigma_bs, [0.016, 0.024, 0.03], atol=1e-12)


def test_ranges_random(rng):
    m = random_medium(rng, BOUNDS, spread=3.0)
    s, _ = evaluate_rays(m, rng.uniform(BOUNDS.lo, BOUNDS.hi), unit(rng, 10_000))
    assert np.all((s.c_med > 0) & (s.c_med < 1))
    assert np.all(s.sigma_att >= 0) and np.all(s.sigma_bs >= 0)


def test_mode_invariances(rng):
    dirs = unit(rng, 30)
    base = random_medium(rng, BOUNDS)
    p1, p2 = rng.uniform(BOUNDS.lo, BOUNDS.hi, (2, 3))
    for mode in MODES:
        m = base.copy()
        m.mode = mode
        a, _ = evaluate_rays(m, p1, dirs)
        b, _ = evaluate_rays(m, p2, dirs)
        c, _ = evaluate_rays(m, p1, dirs[::-1])
        for f in FIELDS:
            va, vb, vc = getattr(a, f), getattr(b, f), getattr(c, f)
            if mode in ("dir_only", "no_dir_no_pos"):
                np.testing.assert_array_equal(va, vb)
            else:
                assert not np.allclose(va, vb)
            if mode in ("pos_only", "no_dir_no_pos"):
                np.testing.assert_allclose(va, vc[::-1], atol=1e-14)
                np.testing.assert_allclose(va, np.broadcast_to(va[0], va.shape), atol=1e-14)
            else:
                assert not np.allclose(va, va[0])


def test_unknown_mode():
    with pytest.raises(UnknownMode):
        medium_variant("sideways")
    with pytest.raises(UnknownMode):
        MediumGrid.homogeneous(BOUNDS, mode="sideways")


@pytest.mark.parametrize("mode", MODES)
def test_corner_gradient_fd(rng, mode):
    m = random_medium(rng, BOUNDS, mode)
    pos = rng.uniform(BOUNDS.lo, BOUNDS.hi)
    dirs = unit(rng, 7)
    up = {f: rng.normal(size=(7, 3)) for f in FIELDS}

    def objective(mm):
        s, _ = evaluate_rays(mm, pos, dirs)
        return sum(np.sum(up[f] * getattr(s, f)) for f in FIELDS)

    _, ctx = evaluate_rays(m, pos, dirs)
    g = medium_backward(ctx, up)
    h = 1e-4
    for f in FIELDS:
        for idx in [(0, 0, 0), (3, 2, 1), (7, 9, 2), (5, 15, 0)]:
            mp, mm = m.copy(), m.copy()
            getattr(mp, f)[idx] += h
            getattr(mm, f)[idx] -= h
            fd = (objective(mp) - objective(mm)) / (2 * h)
            assert g[f][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)
