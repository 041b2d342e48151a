import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fibercut.errors import InvalidTensorError
from fibercut.tensor import (eigen_batch, eigen_symmetric3, fa_volume, fractional_anisotropy,
                             matrix_to_tensor, principal_direction, tensor_fields,
                             tensor_to_matrix)
from fibercut.volume import TensorVolume, VolumeHeader


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_diagonal_tensor(backend):
    es = eigen_symmetric3((3, 0, 0, 2, 0, 1))
    np.testing.assert_allclose(es.lambdas, [3, 2, 1], atol=1e-14)
    np.testing.assert_allclose(np.abs(es.axes), np.eye(3), atol=1e-14)


def test_isotropic_tensor(backend):
    es = eigen_symmetric3(np.eye(3))
    np.testing.assert_allclose(es.lambdas, [1, 1, 1], atol=1e-14)
    np.testing.assert_allclose(es.axes @ es.axes.T, np.eye(3), atol=1e-12)


def test_rotated_diagonal(backend, rng):
    for _ in range(50):
        R = random_rotation(rng)
        es = eigen_symmetric3(R @ np.diag([3.0, 2.0, 1.0]) @ R.T)
        np.testing.assert_allclose(es.lambdas, [3, 2, 1], atol=1e-9)
        for k in range(3):
            assert abs(abs(es.axes[k] @ R[:, k]) - 1) < 1e-9


def test_reconstruction_random(backend, rng):
    m = rng.normal(size=(1000, 3, 3))
    m = m + m.transpose(0, 2, 1)
    lam, axes = eigen_batch(matrix_to_tensor(m))
    assert np.all(np.diff(lam, axis=1) <= 1e-12)
    rec = np.einsum("nki,nk,nkj->nij", axes, lam, axes)
    assert np.abs(rec - m).max() <= 1e-9
    np.testing.assert_allclose(np.einsum("nij,nkj->nik", axes, axes), np.broadcast_to(np.eye(3), m.shape),
                               atol=1e-10)


def test_backends_agree(rng):
    from fibercut import _accel

    m = rng.normal(size=(200, 3, 3))
    t6 = matrix_to_tensor(m + m.transpose(0, 2, 1))
    with _accel.use_numba(True):
        la, _ = eigen_batch(t6)
    with _accel.use_numba(False):
        lb, _ = eigen_batch(t6)
    np.testing.assert_allclose(la, lb, atol=1e-11)


def test_packing_round_trip(rng):
    t6 = rng.normal(size=(10, 6))
    np.testing.assert_array_equal(matrix_to_tensor(tensor_to_matrix(t6)), t6)


def test_fa_known_values():
    assert fractional_anisotropy((2.5, 2.5, 2.5)) == 0.0
    assert abs(fractional_anisotropy((4.0, 0.0, 0.0)) - 1.0) <= 1e-12
    assert abs(fractional_anisotropy((2.0, 1.0, 1.0)) - np.sqrt(1 / 6)) <= 1e-12
    assert fractional_anisotropy((0.0, 0.0, 0.0)) == 0.0


def test_fa_wm_value():
    # the phantoms' bundle eigenvalues
    assert fractional_anisotropy((1.7e-3, 0.3e-3, 0.3e-3)) == pytest.approx(0.7990222, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=3), st.floats(1e-3, 1e3),
       st.permutations([0, 1, 2]))
def test_fa_invariances(lam, scale, perm):
    lam = np.array(lam)
    fa = fractional_anisotropy(lam)
    assert 0.0 <= fa <= 1.0
    assert fractional_anisotropy(lam * scale) == pytest.approx(fa, abs=1e-12)
    assert fractional_anisotropy(lam[list(perm)]) == pytest.approx(fa, abs=1e-12)


def test_fa_negative_eigenvalue():
    with pytest.raises(InvalidTensorError):
        fractional_anisotropy((1.0, 0.5, -0.1))
    # noise-level negatives are clamped
    assert fractional_anisotropy((1.0, 0.0, -1e-12)) == pytest.approx(1.0, abs=1e-9)


def test_principal_direction(backend, rng):
    axis, deg = principal_direction((3, 0, 0, 2, 0, 1))
    assert not deg and abs(axis[0]) == pytest.approx(1.0)
    R = random_rotation(rng)
    axis, deg = principal_direction(R @ np.diag([3.0, 2.0, 1.0]) @ R.T)
    assert abs(abs(axis @ R[:, 0]) - 1) < 1e-9
    _, deg = principal_direction(np.eye(3))
    assert deg
    _, deg = principal_direction(np.diag([2.0, 2.0, 1.0]))
    assert deg


def _volume(t6):
    return TensorVolume(VolumeHeader(t6.shape[:3], (1, 1, 1), components=6), t6.astype(np.float32))


def test_fa_volume(backend):
    t6 = np.zeros((3, 2, 2, 6))
    t6[..., [0, 3, 5]] = 1.0
    assert np.all(fa_volume(_volume(t6)).data == 0)
    t6[1, 0, 1] = (2, 0, 0, 1, 0, 1)
    fa = fa_volume(_volume(t6))
    assert fa.header.components == 1
    assert fa.data[1, 0, 1] == pytest.approx(np.sqrt(1 / 6), abs=1e-6)
    assert np.count_nonzero(fa.data) == 1


def test_fa_volume_reports_voxel(backend):
    t6 = np.zeros((2, 3, 2, 6))
    t6[..., [0, 3, 5]] = 1.0
    t6[1, 2, 0] = (1, 0, 0, 1, 0, -1)
    with pytest.raises(InvalidTensorError) as info:
        fa_volume(_volume(t6))
    assert info.value.voxel == (1, 2, 0)


def test_tensor_fields(torus):
    f = tensor_fields(torus.tensors)
    inside = torus.truth.data.astype(bool)
    np.testing.assert_allclose(f.fa.data[inside], 0.7990222, atol=1e-5)
    assert np.all(f.fa.data[~inside] < 1e-5)
    assert np.all(f.degenerate[~inside]) and not np.any(f.degenerate[inside])
