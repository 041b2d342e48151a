from fractions import Fraction
import itertools

import numpy as np
import pytest

from fibercut.cost import (MASK_KINDS, MASK_SIZES, LatticeParams, binomial_row, boundary_cost,
                           estimate_mean_fa, lattice_points, make_gauss_mask, make_mask,
                           make_mean_mask, mask_means, sample_lattice)
from fibercut.errors import FibercutError
from fibercut.phantom import interior_fa
from fibercut.tensor import fa_volume
from fibercut.tracking import Centerline
from fibercut.volume import ScalarVolume, VolumeHeader

ALL_VARIANTS = list(itertools.product(MASK_KINDS, MASK_SIZES))


@pytest.mark.parametrize("kind,size", ALL_VARIANTS)
def test_masks_normalised(kind, size):
    m = make_mask(kind, size)
    assert m.weights.shape == (size,) * 3
    assert abs(m.weights.sum() - 1.0) <= 1e-12
    assert np.all(m.weights > 0)
    # symmetric under every axis flip
    for ax in range(3):
        np.testing.assert_array_equal(m.weights, np.flip(m.weights, ax))


def test_mean_mask_values():
    assert make_mean_mask(1).weights.item() == 1.0
    np.testing.assert_allclose(make_mean_mask(3).weights, 1 / 27, rtol=1e-15)
    np.testing.assert_allclose(make_mean_mask(5).weights, 1 / 125, rtol=1e-15)


def test_gauss_5x5_marginal_exact():
    row = binomial_row(5)
    assert row == [Fraction(k, 16) for k in (1, 4, 6, 4, 1)]
    plane = [[a * b for b in row] for a in row]
    assert plane[0][0] == Fraction(1, 256)
    assert plane[2][2] == Fraction(36, 256)
    assert sum(sum(r) for r in plane) == 1
    # the float kernel's central-plane marginal matches the rationals
    w = make_gauss_mask(5).weights
    marginal = w.sum(axis=2)
    want = np.array([[float(x) for x in r] for r in plane])
    np.testing.assert_allclose(marginal, want, rtol=1e-15)


def test_gauss_3d_corner():
    row = binomial_row(5)
    assert row[0] ** 3 == Fraction(1, 4096)
    assert make_gauss_mask(5).weights[0, 0, 0] == pytest.approx(1 / 4096, rel=1e-15)
    assert make_gauss_mask(1).weights.item() == 1.0


def test_bad_mask_size():
    with pytest.raises(FibercutError):
        make_mask("mean", 4)
    with pytest.raises(FibercutError):
        make_mask("median", 3)


def _scalar(data, spacing=1.0, origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data, np.float32)
    return ScalarVolume(VolumeHeader(data.shape, (spacing,) * 3, origin), data)


def _line(n=20, start=(2, 2, 1), step=(0.9, 0.3, 0.6)):
    return Centerline.from_points(np.asarray(start) + np.outer(np.arange(n), step))


@pytest.mark.parametrize("kind,size", ALL_VARIANTS)
def test_constant_fa_estimate(backend, kind, size):
    fa = _scalar(np.full((20, 12, 15), 0.7))
    # the line runs close to the border so large masks are clamped
    assert estimate_mean_fa(fa, _line(), make_mask(kind, size)) == pytest.approx(0.7, abs=1e-6)


def test_size_one_masks_identical(backend, rng):
    fa = _scalar(rng.random((20, 12, 15)))
    cl = _line()
    a = estimate_mean_fa(fa, cl, make_mask("mean", 1))
    b = estimate_mean_fa(fa, cl, make_mask("gauss", 1))
    idx = fa.header.nearest_voxel(cl.points)
    plain = fa.data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64).mean()
    assert a == b == pytest.approx(plain, abs=1e-12)


def test_mask_backends_agree(rng):
    from fibercut import _accel

    fa = _scalar(rng.random((10, 9, 8)))
    pts = rng.uniform(-3, 12, (100, 3))
    for kind, size in ALL_VARIANTS:
        m = make_mask(kind, size)
        with _accel.use_numba(True):
            a = mask_means(fa, pts, m)
        with _accel.use_numba(False):
            b = mask_means(fa, pts, m)
        np.testing.assert_allclose(a, b, atol=1e-12)


def _ring_arc(n=50, R=40.0, deg=90.0):
    th = np.radians(np.linspace(0, deg, n))
    return Centerline.from_points(np.stack([R * np.cos(th), R * np.sin(th), 0 * th], -1))


def test_torus_mean_fa(torus):
    fa = fa_volume(torus.tensors)
    est = estimate_mean_fa(fa, _ring_arc(), make_mean_mask(3))
    assert abs(est - interior_fa()) <= 0.05


def test_lattice_geometry_straight():
    cl = Centerline.from_points(np.outer(np.arange(5.0), [0, 0, 1]))
    lp = LatticeParams(P=4, R=7, I=3, delta_mm=0.5)
    x = lattice_points(cl, lp)
    assert x.shape == (5, 8, 4, 3)
    np.testing.assert_allclose(x[0, 0, 0] - cl.points[0], 0.5 * cl.normals1[0], atol=1e-15)
    # ray r = 2 of 8 points along n2
    np.testing.assert_allclose(x[3, 2, 1] - cl.points[3], 1.0 * cl.normals2[3], atol=1e-15)


def test_lattice_rings_are_circles():
    cl = _ring_arc(12)
    lp = LatticeParams(P=11, R=29, I=9, delta_mm=0.5)
    x = lattice_points(cl, lp)
    off = x - cl.points[:, None, None, :]
    radius = np.linalg.norm(off, axis=-1)
    np.testing.assert_allclose(radius, np.broadcast_to((np.arange(10) + 1) * 0.5, radius.shape),
                               atol=1e-9)
    # every sample lies in its plane's normal plane
    np.testing.assert_allclose(np.einsum("prid,pd->pri", off, cl.tangents), 0, atol=1e-9)


def test_lattice_needs_matching_centerline():
    with pytest.raises(FibercutError):
        lattice_points(_ring_arc(10), LatticeParams(P=49))


@pytest.mark.parametrize("kind", ["deviation", "boundary"])
def test_costs_zero_on_matching_fa(kind):
    fa = _scalar(np.full((30, 30, 30), 0.6), origin=(-15, -15, -15))
    cl = Centerline.from_points(np.outer(np.linspace(-5, 5, 11), [0, 0, 1]))
    cf = sample_lattice(fa, cl, LatticeParams(P=10, R=7, I=9), 0.6, kind=kind)
    assert cf.costs.shape == (11, 8, 10)
    assert np.abs(cf.costs).max() < 1e-6


def test_boundary_cost_definition():
    dev = np.array([0.0, 0.0, 0.3, 0.8, 0.8, 0.7])
    np.testing.assert_allclose(boundary_cost(dev), [0.0, 0.3, 0.5, 0.0, 0.0])


def test_fa_mean_out_of_range():
    fa = _scalar(np.zeros((5, 5, 5)))
    with pytest.raises(FibercutError):
        sample_lattice(fa, _line(3, (1, 1, 1), (1, 1, 1)), LatticeParams(P=2), 1.5)


def test_torus_cost_profile(torus):
    fa = fa_volume(torus.tensors)
    fam = interior_fa()
    lp = LatticeParams(P=49, R=29, I=29, delta_mm=0.5)
    cf = sample_lattice(fa, _ring_arc(), lp, fam)
    radius = (np.arange(lp.I + 1) + 1) * lp.delta_mm
    # trilinear cells reach sqrt(3) voxels, so only these are free of partial volume
    inner, outer = radius <= 5.0 - np.sqrt(3), radius >= 5.0 + np.sqrt(3)
    assert np.abs(cf.costs[..., inner]).max() < 1e-5
    np.testing.assert_allclose(cf.costs[..., outer], fam, atol=1e-5)
    # radius where the deviation crosses half height, per ray
    half = np.argmax(cf.costs > 0.5 * fam, axis=-1)
    i0 = half - 1
    c0 = np.take_along_axis(cf.costs, i0[..., None], -1)[..., 0]
    c1 = np.take_along_axis(cf.costs, half[..., None], -1)[..., 0]
    r_half = radius[i0] + lp.delta_mm * (0.5 * fam - c0) / (c1 - c0)
    assert abs(r_half.mean() - 5.0) <= lp.delta_mm
