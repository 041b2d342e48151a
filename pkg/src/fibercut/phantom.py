"""Procedural DTI phantoms with analytic ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomError
from .tracking import Centerline
from .volume import LabelVolume, TensorVolume, VolumeHeader

WM_LAMBDAS = (1.7e-3, 0.3e-3, 0.3e-3)
ISO_LAMBDAS = (0.8e-3, 0.8e-3, 0.8e-3)


def interior_fa(lambdas=WM_LAMBDAS) -> float:
    """Analytic FA of the bundle tensor."""
    from .tensor import fractional_anisotropy

    return float(fractional_anisotropy(np.asarray(lambdas, dtype=float)))


def centered_grid(dims=(128, 128, 128), spacing=1.0) -> VolumeHeader:
    """Tensor grid whose world origin (0, 0, 0) sits at the grid centre."""
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    origin = -0.5 * (np.asarray(dims) - 1) * spacing
    return VolumeHeader(tuple(dims), tuple(spacing), tuple(origin), 6, "f32")


@dataclass(frozen=True)
class TorusSpec:
    ring_radius_mm: float = 40.0
    tube_radius_mm: float = 5.0
    inside_lambdas: tuple[float, float, float] = WM_LAMBDAS
    outside_lambdas: tuple[float, float, float] = ISO_LAMBDAS
    noise_sigma: float = 0.0
    grid: VolumeHeader = field(default_factory=centered_grid)
    seed: int = 0


@dataclass(frozen=True, eq=False)
class PhantomBundle:
    tensors: TensorVolume
    truth: LabelVolume
    analytic_centerline: Centerline


def _frame_tensor(e1, e2, e3, lam):
    """Packed tensors sum_k lam_k e_k e_k^T for per-voxel frames (..., 3)."""
    m = (lam[0] * e1[..., :, None] * e1[..., None, :]
         + lam[1] * e2[..., :, None] * e2[..., None, :]
         + lam[2] * e3[..., :, None] * e3[..., None, :])
    return np.stack([m[..., 0, 0], m[..., 0, 1], m[..., 0, 2],
                     m[..., 1, 1], m[..., 1, 2], m[..., 2, 2]], -1)


def _assemble(header, inside, e1, e2, e3, lam_in, lam_out, sigma, seed):
    lam_in = np.asarray(lam_in, dtype=float)
    lam_out = np.asarray(lam_out, dtype=float)
    if np.any(np.diff(lam_in) > 0) or np.any(lam_in <= 0):
        raise PhantomError("inside eigenvalues must be positive and descending")
    if not np.allclose(lam_out, lam_out[0]) or lam_out[0] <= 0:
        raise PhantomError("outside eigenvalues must be isotropic and positive")
    t6 = np.zeros(header.dims + (6,))
    t6[..., 0] = t6[..., 3] = t6[..., 5] = lam_out[0]
    t6[inside] = _frame_tensor(e1, e2, e3, lam_in)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        t6 += rng.normal(0.0, sigma, t6.shape)
    tensors = TensorVolume(header.with_kind(6, "f32"), t6.astype(np.float32))
    truth = LabelVolume(header.with_kind(1, "u8"), inside.astype(np.uint8))
    return tensors, truth


def torus_phantom(spec: TorusSpec = TorusSpec()) -> PhantomBundle:
    """Torus bundle around the z axis, centred at the world origin.

    Inside the tube the principal axis is the ring tangent at the nearest
    ring point, the second axis is radial in the ring plane and the third
    is +z.  Everything else is isotropic.
    """
    R, r = spec.ring_radius_mm, spec.tube_radius_mm
    if not 0 < r < R:
        raise PhantomError("need 0 < tube_radius < ring_radius")
    header = spec.grid
    centers = header.voxel_centers()
    lo = np.asarray(header.origin_mm)
    hi = lo + (np.asarray(header.dims) - 1) * np.asarray(header.spacing_mm)
    if np.any(lo[:2] > -(R + r)) or np.any(hi[:2] < R + r) or lo[2] > -r or hi[2] < r:
        raise PhantomError("torus does not fit inside the grid")
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    rho = np.hypot(x, y)
    dist = np.hypot(rho - R, z)
    inside = dist <= r
    rs = np.where(rho > 0, rho, 1.0)[inside]
    radial = np.stack([x[inside] / rs, y[inside] / rs, np.zeros_like(rs)], -1)
    tangent = np.stack([-radial[:, 1], radial[:, 0], np.zeros_like(rs)], -1)
    up = np.broadcast_to([0.0, 0.0, 1.0], tangent.shape)
    tensors, truth = _assemble(header, inside, tangent, radial, up, spec.inside_lambdas,
                               spec.outside_lambdas, spec.noise_sigma, spec.seed)
    theta = np.linspace(0.0, 2 * np.pi, 361)
    ring = np.stack([R * np.cos(theta), R * np.sin(theta), np.zeros_like(theta)], -1)
    return PhantomBundle(tensors, truth, Centerline.from_points(ring))


def ring_point(spec: TorusSpec, angle_deg: float) -> tuple[float, float, float]:
    a = np.radians(angle_deg)
    return (spec.ring_radius_mm * np.cos(a), spec.ring_radius_mm * np.sin(a), 0.0)


def sinusoid(t, amplitude_mm, wavelength_mm):
    t = np.asarray(t, dtype=float)
    k = 2 * np.pi / wavelength_mm
    return np.stack([amplitude_mm * np.sin(k * t), np.zeros_like(t), t], -1)


def curved_phantom(amplitude_mm: float = 10.0, wavelength_mm: float = 80.0,
                   tube_radius_mm: float = 5.0, grid: VolumeHeader | None = None,
                   lambdas=WM_LAMBDAS, noise_sigma: float = 0.0,
                   outside_lambdas=ISO_LAMBDAS, seed: int = 0) -> PhantomBundle:
    """Tube of radius ``tube_radius_mm`` around x = A sin(2 pi z / w), y = 0.

    The curve spans the grid's full z range.
    """
    if grid is None:
        grid = centered_grid()
    r = float(tube_radius_mm)
    if r <= 0 or wavelength_mm <= 0:
        raise PhantomError("tube radius and wavelength must be positive")
    lo = np.asarray(grid.origin_mm)
    hi = lo + (np.asarray(grid.dims) - 1) * np.asarray(grid.spacing_mm)
    if lo[0] > -(abs(amplitude_mm) + r) or hi[0] < abs(amplitude_mm) + r or lo[1] > -r or hi[1] < r:
        raise PhantomError("curve leaves the grid")
    centers = grid.voxel_centers()
    k = 2 * np.pi / wavelength_mm
    # only voxels within r of the curve in the (x, y) slab can be inside
    near = (np.abs(centers[..., 1]) <= r) & (np.abs(centers[..., 0]) <= abs(amplitude_mm) + r)
    pts = centers[near]
    cand = pts[:, 2:3] + np.linspace(-r, r, 81)[None, :]
    cx = amplitude_mm * np.sin(k * cand)
    d2 = (pts[:, 0:1] - cx) ** 2 + pts[:, 1:2] ** 2 + (pts[:, 2:3] - cand) ** 2
    t = cand[np.arange(len(pts)), np.argmin(d2, axis=1)]
    for _ in range(4):
        # Newton on g(t) = (c(t) - p) . c'(t)
        s, c = np.sin(k * t), np.cos(k * t)
        ex = amplitude_mm * s - pts[:, 0]
        ez = t - pts[:, 2]
        g = ex * amplitude_mm * k * c + ez
        dg = (amplitude_mm * k * c) ** 2 - ex * amplitude_mm * k * k * s + 1.0
        t = np.clip(t - g / np.where(np.abs(dg) > 1e-12, dg, 1.0), pts[:, 2] - r, pts[:, 2] + r)
    foot = sinusoid(t, amplitude_mm, wavelength_mm)
    dist = np.linalg.norm(pts - foot, axis=1)
    ins = dist <= r
    inside = np.zeros(grid.dims, dtype=bool)
    inside[near] = ins
    tt = t[ins]
    tan = np.stack([amplitude_mm * k * np.cos(k * tt), np.zeros_like(tt), np.ones_like(tt)], -1)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    ey = np.broadcast_to([0.0, 1.0, 0.0], tan.shape)
    e3 = np.cross(tan, ey)
    tensors, truth = _assemble(grid, inside, tan, ey, e3, lambdas, outside_lambdas,
                               noise_sigma, seed)
    ts = np.linspace(lo[2], hi[2], 4 * grid.dims[2])
    return PhantomBundle(tensors, truth, Centerline.from_points(sinusoid(ts, amplitude_mm, wavelength_mm)))
