"""Evaluation-point lattice, mean-FA estimation with 3D masks, and node costs.

Node ``(p, r, i)`` sits in the normal plane of centerline point ``p``, on ray
``r`` at angle ``2 pi r / (R + 1)`` measured from ``n1`` towards ``n2``, at
radius ``(i + 1) * delta_mm``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from . import _accel
from .errors import FibercutError
from .tracking import Centerline
from .volume import ScalarVolume, trilinear_sample_many

MASK_SIZES = (1, 3, 5, 7, 9)
MASK_KINDS = ("mean", "gauss")
COST_KINDS = ("deviation", "boundary")


@dataclass(frozen=True)
class LatticeParams:
    P: int = 49
    R: int = 29
    I: int = 29
    delta_mm: float = 0.5

    def __post_init__(self):
        if self.P < 1 or self.R < 2 or self.I < 1:
            raise FibercutError(f"need P >= 1, R >= 2, I >= 1; got {self}")
        if not self.delta_mm > 0:
            raise FibercutError("delta_mm must be > 0")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.P + 1, self.R + 1, self.I + 1)

    @property
    def n_nodes(self) -> int:
        return (self.P + 1) * (self.R + 1) * (self.I + 1)


@dataclass(frozen=True, eq=False)
class Mask3D:
    kind: str
    size: int
    weights: np.ndarray  # (size, size, size), centre at [size // 2] * 3


def _check_size(size):
    if size not in MASK_SIZES:
        raise FibercutError(f"mask size must be one of {MASK_SIZES}, got {size}")


def make_mean_mask(size: int) -> Mask3D:
    _check_size(size)
    return Mask3D("mean", size, np.full((size,) * 3, 1.0 / size**3))


def binomial_row(size: int) -> list[Fraction]:
    """Exact 1D binomial weights C(size-1, k) / 2^(size-1)."""
    n = size - 1
    return [Fraction(comb(n, k), 2**n) for k in range(size)]


def make_gauss_mask(size: int) -> Mask3D:
    """Separable binomial kernel: outer product of three binomial rows."""
    _check_size(size)
    row = np.array([float(f) for f in binomial_row(size)])
    return Mask3D("gauss", size, np.einsum("i,j,k->ijk", row, row, row))


def make_mask(kind: str, size: int) -> Mask3D:
    if kind == "mean":
        return make_mean_mask(size)
    if kind == "gauss":
        return make_gauss_mask(size)
    raise FibercutError(f"unknown mask kind {kind!r}")


@_accel.njit
def _mask_kernel(data, centers, weights):
    nx, ny, nz = data.shape
    h = weights.shape[0] // 2
    out = np.zeros(centers.shape[0])
    for k in range(centers.shape[0]):
        acc = 0.0
        for a in range(-h, h + 1):
            x = min(max(centers[k, 0] + a, 0), nx - 1)
            for b in range(-h, h + 1):
                y = min(max(centers[k, 1] + b, 0), ny - 1)
                for c in range(-h, h + 1):
                    z = min(max(centers[k, 2] + c, 0), nz - 1)
                    acc += data[x, y, z] * weights[a + h, b + h, c + h]
        out[k] = acc
    return out


def _mask_numpy(data, centers, weights):
    h = weights.shape[0] // 2
    off = np.arange(-h, h + 1)
    dims = np.asarray(data.shape)
    ix = np.clip(centers[:, 0, None] + off, 0, dims[0] - 1)
    iy = np.clip(centers[:, 1, None] + off, 0, dims[1] - 1)
    iz = np.clip(centers[:, 2, None] + off, 0, dims[2] - 1)
    block = data[ix[:, :, None, None], iy[:, None, :, None], iz[:, None, None, :]]
    return np.einsum("nabc,abc->n", block.astype(np.float64), weights)


def mask_means(fa: ScalarVolume, points_mm, mask: Mask3D) -> np.ndarray:
    """Mask-weighted FA around the voxel nearest to each point (edge-clamped)."""
    centers = np.ascontiguousarray(fa.header.nearest_voxel(np.asarray(points_mm).reshape(-1, 3)))
    if _accel.enabled():
        return _mask_kernel(fa.data, centers, mask.weights)
    return _mask_numpy(fa.data, centers, mask.weights)


def estimate_mean_fa(fa: ScalarVolume, centerline: Centerline, mask: Mask3D) -> float:
    """Unweighted average over centerline points of the local mask means."""
    return float(np.mean(mask_means(fa, centerline.points, mask)))


@dataclass(frozen=True, eq=False)
class CostField:
    params: LatticeParams
    points: np.ndarray  # (P+1, R+1, I+1, 3)
    fa_samples: np.ndarray  # (P+1, R+1, I+2); the last column lies one step past the lattice
    costs: np.ndarray  # (P+1, R+1, I+1)
    fa_mean: float
    kind: str = "deviation"


def lattice_points(centerline: Centerline, params: LatticeParams, extra: int = 0) -> np.ndarray:
    """Sample positions x(p, r, i), shape (P+1, R+1, I+1+extra, 3)."""
    if len(centerline.points) != params.P + 1:
        raise FibercutError(
            f"centerline has {len(centerline.points)} points, lattice needs {params.P + 1}")
    theta = 2 * np.pi * np.arange(params.R + 1) / (params.R + 1)
    radius = (np.arange(params.I + 1 + extra) + 1) * params.delta_mm
    direction = (np.cos(theta)[None, :, None] * centerline.normals1[:, None, :]
                 + np.sin(theta)[None, :, None] * centerline.normals2[:, None, :])
    return (centerline.points[:, None, None, :]
            + radius[None, None, :, None] * direction[:, :, None, :])


def boundary_cost(deviation: np.ndarray) -> np.ndarray:
    """Outward increase of the deviation: c(i) = max(0, dev(i+1) - dev(i)).

    ``deviation`` carries one radial sample beyond the lattice, so the
    result has one fewer column than its input.
    """
    return np.maximum(deviation[..., 1:] - deviation[..., :-1], 0.0)


def sample_lattice(fa: ScalarVolume, centerline: Centerline, params: LatticeParams,
                   fa_mean: float, kind: str = "deviation") -> CostField:
    """Sample FA on the lattice and derive per-node costs.

    ``kind="deviation"`` gives c = |FA - fa_mean|.  ``kind="boundary"``
    gives the outward increase of that deviation along each ray; its
    maximum sits on the last sample before the FA departs from the mean,
    which is where the cut places the last interior node.
    """
    if not 0.0 <= fa_mean <= 1.0:
        raise FibercutError(f"fa_mean must lie in [0, 1], got {fa_mean}")
    if kind not in COST_KINDS:
        raise FibercutError(f"unknown cost kind {kind!r}")
    pts = lattice_points(centerline, params, extra=1)
    samples = trilinear_sample_many(fa, pts)
    dev = np.abs(samples - fa_mean)
    costs = dev[..., :-1] if kind == "deviation" else boundary_cost(dev)
    return CostField(params, np.ascontiguousarray(pts[:, :, :-1]), samples,
                     np.ascontiguousarray(costs), float(fa_mean), kind)
