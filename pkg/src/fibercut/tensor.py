"""Symmetric 3x3 eigensystems, principal diffusion direction and FA."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InvalidTensorError
from .volume import ScalarVolume, TensorVolume

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
NEGATIVE_CLAMP = 1e-9
DEGENERATE_TOL = 1e-12

_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class EigenSystem:
    lambdas: np.ndarray  # (3,) descending
    axes: np.ndarray  # (3, 3), row k is the unit axis of lambdas[k]


def tensor_to_matrix(t6) -> np.ndarray:
    """(Dxx, Dxy, Dxz, Dyy, Dyz, Dzz) -> symmetric (..., 3, 3) array."""
    t6 = np.asarray(t6, dtype=np.float64)
    xx, xy, xz, yy, yz, zz = np.moveaxis(t6, -1, 0)
    rows = [np.stack([xx, xy, xz], -1), np.stack([xy, yy, yz], -1), np.stack([xz, yz, zz], -1)]
    return np.stack(rows, -2)


def matrix_to_tensor(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return np.stack([m[..., 0, 0], m[..., 0, 1], m[..., 0, 2],
                     m[..., 1, 1], m[..., 1, 2], m[..., 2, 2]], -1)


@_accel.njit
def _jacobi_kernel(t6, tol, max_sweeps):
    n = t6.shape[0]
    lam = np.empty((n, 3))
    axes = np.empty((n, 3, 3))
    a = np.empty((3, 3))
    v = np.empty((3, 3))
    for k in range(n):
        a[0, 0] = t6[k, 0]
        a[0, 1] = t6[k, 1]
        a[0, 2] = t6[k, 2]
        a[1, 1] = t6[k, 3]
        a[1, 2] = t6[k, 4]
        a[2, 2] = t6[k, 5]
        a[1, 0] = a[0, 1]
        a[2, 0] = a[0, 2]
        a[2, 1] = a[1, 2]
        for i in range(3):
            for j in range(3):
                v[i, j] = 1.0 if i == j else 0.0
        scale = 0.0
        for i in range(3):
            for j in range(3):
                scale += a[i, j] * a[i, j]
        thresh = tol * tol * scale
        for _sweep in range(max_sweeps):
            off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
            if off <= thresh:
                break
            for pair in range(3):
                if pair == 0:
                    p, q, r = 0, 1, 2
                elif pair == 1:
                    p, q, r = 0, 2, 1
                else:
                    p, q, r = 1, 2, 0
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                arp = a[r, p]
                arq = a[r, q]
                a[r, p] = c * arp - s * arq
                a[p, r] = a[r, p]
                a[r, q] = s * arp + c * arq
                a[q, r] = a[r, q]
                for i in range(3):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
        # sort descending (three elements)
        order = np.argsort(np.array([-a[0, 0], -a[1, 1], -a[2, 2]]), kind="mergesort")
        for j in range(3):
            c_ = order[j]
            lam[k, j] = a[c_, c_]
            for i in range(3):
                axes[k, j, i] = v[i, c_]
    return lam, axes


def _jacobi_numpy(t6, tol, max_sweeps):
    a = tensor_to_matrix(t6)
    n = a.shape[0]
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    scale = np.einsum("nij,nij->n", a, a)
    thresh = tol * tol * scale
    idx = np.arange(n)
    for _ in range(max_sweeps):
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        todo = off > thresh
        if not todo.any():
            break
        for p, q in _PAIRS:
            r = 3 - p - q
            apq = a[:, p, q]
            m = todo & (apq != 0.0)
            if not m.any():
                continue
            sel = idx[m]
            apq = apq[m]
            theta = (a[sel, q, q] - a[sel, p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            a[sel, p, p] -= t * apq
            a[sel, q, q] += t * apq
            a[sel, p, q] = 0.0
            a[sel, q, p] = 0.0
            arp = a[sel, r, p].copy()
            arq = a[sel, r, q].copy()
            a[sel, r, p] = a[sel, p, r] = c * arp - s * arq
            a[sel, r, q] = a[sel, q, r] = s * arp + c * arq
            vp = v[sel, :, p].copy()
            vq = v[sel, :, q].copy()
            v[sel, :, p] = c[:, None] * vp - s[:, None] * vq
            v[sel, :, q] = s[:, None] * vp + c[:, None] * vq
    diag = np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], -1)
    order = np.argsort(-diag, axis=1, kind="stable")
    lam = np.take_along_axis(diag, order, axis=1)
    axes = np.take_along_axis(v, order[:, None, :], axis=2).transpose(0, 2, 1)
    return lam, np.ascontiguousarray(axes)


def eigen_batch(t6) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (N, 3) descending and axes (N, 3, 3) for N packed tensors.

    ``axes[n, k]`` is the unit eigenvector of ``lambdas[n, k]``.
    """
    t6 = np.ascontiguousarray(np.asarray(t6, dtype=np.float64).reshape(-1, 6))
    if _accel.enabled():
        return _jacobi_kernel(t6, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    return _jacobi_numpy(t6, JACOBI_TOL, JACOBI_MAX_SWEEPS)


def eigen_symmetric3(tensor) -> EigenSystem:
    t6 = np.asarray(tensor, dtype=np.float64)
    if t6.shape == (3, 3):
        t6 = matrix_to_tensor(t6)
    if not np.all(np.isfinite(t6)):
        raise InvalidTensorError("tensor has non-finite components")
    lam, axes = eigen_batch(t6)
    return EigenSystem(lam[0], axes[0])


def _clamp_lambdas(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    top = np.max(np.abs(lam), axis=-1, keepdims=True)
    bad = lam < -NEGATIVE_CLAMP * top
    if np.any(bad):
        raise InvalidTensorError("eigenvalue is significantly negative")
    return np.maximum(lam, 0.0)


def fa_from_lambdas(lam) -> np.ndarray:
    """Vectorised FA for an array of eigenvalue triples (..., 3)."""
    lam = _clamp_lambdas(lam)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    num = (l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2
    den = 2.0 * (l1 * l1 + l2 * l2 + l3 * l3)
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.sqrt(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0))
    return np.minimum(fa, 1.0)


def fractional_anisotropy(lambdas) -> float:
    """FA of one eigenvalue triple; 0 for the zero tensor.

    Tiny negative eigenvalues (noise, at most 1e-9 of the largest one in
    magnitude) are clamped to zero; anything more negative raises
    :class:`InvalidTensorError`.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.shape != (3,) or not np.all(np.isfinite(lam)):
        raise InvalidTensorError(f"expected three finite eigenvalues, got {lambdas!r}")
    return float(fa_from_lambdas(lam))


def principal_direction(tensor) -> tuple[np.ndarray, bool]:
    """Unit axis of the largest eigenvalue and a degeneracy flag.

    The flag is set when the two largest eigenvalues coincide to within
    1e-12 (relative to the largest magnitude), in which case the returned
    axis is an arbitrary member of the eigenspace.
    """
    es = eigen_symmetric3(tensor)
    l1, l2 = es.lambdas[0], es.lambdas[1]
    scale = max(abs(l1), abs(es.lambdas[2]))
    degenerate = scale == 0.0 or (l1 - l2) <= DEGENERATE_TOL * scale
    return es.axes[0], bool(degenerate)


def eigen_volume(vol: TensorVolume) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel eigenvalues (nx, ny, nz, 3) and axes (nx, ny, nz, 3, 3)."""
    dims = vol.header.dims
    lam, axes = eigen_batch(vol.data.reshape(-1, 6))
    return lam.reshape(dims + (3,)), axes.reshape(dims + (3, 3))


def _fa_checked(lam: np.ndarray, dims) -> np.ndarray:
    flat = lam.reshape(-1, 3)
    top = np.max(np.abs(flat), axis=1)
    bad = np.flatnonzero(np.any(flat < -NEGATIVE_CLAMP * top[:, None], axis=1))
    if bad.size:
        voxel = tuple(int(i) for i in np.unravel_index(bad[0], dims))
        raise InvalidTensorError(f"tensor at voxel {voxel} has a negative eigenvalue", voxel=voxel)
    return fa_from_lambdas(flat).reshape(dims)


def fa_volume(vol: TensorVolume) -> ScalarVolume:
    lam, _ = eigen_volume(vol)
    fa = _fa_checked(lam, vol.header.dims)
    return ScalarVolume(vol.header.with_kind(1, "f32"), fa.astype(np.float32))


@dataclass(frozen=True, eq=False)
class TensorFields:
    """FA map plus principal directions, computed from one eigen pass."""

    fa: ScalarVolume
    directions: np.ndarray  # (nx, ny, nz, 3)
    degenerate: np.ndarray  # (nx, ny, nz) bool


def tensor_fields(vol: TensorVolume) -> TensorFields:
    lam, axes = eigen_volume(vol)
    fa = _fa_checked(lam, vol.header.dims)
    scale = np.maximum(np.abs(lam[..., 0]), np.abs(lam[..., 2]))
    degenerate = (scale == 0.0) | ((lam[..., 0] - lam[..., 1]) <= DEGENERATE_TOL * scale)
    return TensorFields(
        ScalarVolume(vol.header.with_kind(1, "f32"), fa.astype(np.float32)),
        np.ascontiguousarray(axes[..., 0, :]),
        degenerate,
    )
