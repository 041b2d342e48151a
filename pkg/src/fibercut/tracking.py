"""Deterministic streamline tracking and the centerline that anchors the lattice."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .errors import DegenerateCenterlineError, NoCenterlineError, TrackingError
from .tensor import TensorFields, tensor_fields
from .volume import ScalarVolume, TensorVolume


@dataclass(frozen=True)
class SeedRegion:
    center_mm: tuple[float, float, float]
    radius_mm: float

    def __post_init__(self):
        object.__setattr__(self, "center_mm", tuple(float(c) for c in self.center_mm))
        if not self.radius_mm > 0:
            raise TrackingError(f"seed radius must be > 0, got {self.radius_mm}")

    def contains(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.center_mm)) <= self.radius_mm

    @classmethod
    def from_json(cls, d):
        return cls(tuple(d["center_mm"]), float(d["radius_mm"]))


@dataclass(frozen=True)
class TrackingParams:
    fa_min: float = 0.2
    angle_max_deg: float = 45.0
    step_mm: float | None = None  # None: one voxel diagonal
    min_len_mm: float = 20.0
    max_len_mm: float = 300.0

    def __post_init__(self):
        if not 0 < self.fa_min < 1:
            raise TrackingError("fa_min must lie in (0, 1)")
        if not 0 < self.angle_max_deg <= 90:
            raise TrackingError("angle_max_deg must lie in (0, 90]")
        if self.step_mm is not None and not self.step_mm > 0:
            raise TrackingError("step_mm must be > 0")
        if not 0 < self.min_len_mm < self.max_len_mm:
            raise TrackingError("need 0 < min_len_mm < max_len_mm")

    def resolved_step(self, spacing) -> float:
        if self.step_mm is not None:
            return float(self.step_mm)
        return float(np.linalg.norm(spacing))


@dataclass(frozen=True, eq=False)
class Streamline:
    points: np.ndarray  # (K, 3) mm

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True, eq=False)
class Centerline:
    """Sampled centerline with a rotation-minimising frame at each point.

    ``normals1[p]``, ``normals2[p]`` and ``tangents[p]`` form a right-handed
    orthonormal triad (n1 x n2 = t).
    """

    points: np.ndarray
    tangents: np.ndarray
    normals1: np.ndarray
    normals2: np.ndarray = field(repr=False)

    @property
    def P(self) -> int:
        return len(self.points) - 1

    def to_json(self) -> list:
        return [[float(c) for c in p] for p in self.points]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def from_points(cls, points) -> "Centerline":
        pts = np.asarray(points, dtype=np.float64)
        t, n1, n2 = rmf_frames(pts)
        return cls(pts, t, n1, n2)

    @classmethod
    def load(cls, path) -> "Centerline":
        return cls.from_points(json.loads(Path(path).read_text()))


# -- tracking ---------------------------------------------------------------

@_accel.njit
def _track_kernel(starts, fa, dirs, degenerate, origin, spacing, step, fa_min, cos_max,
                  max_steps, min_len, goal_c, goal_r, aim):
    nx, ny, nz = fa.shape
    n = starts.shape[0]
    pts = np.zeros((n, max_steps + 1, 3))
    counts = np.zeros(n, np.int64)
    accepted = np.zeros(n, np.bool_)
    for s in range(n):
        cur = starts[s].copy()
        ix = int(round((cur[0] - origin[0]) / spacing[0]))
        iy = int(round((cur[1] - origin[1]) / spacing[1]))
        iz = int(round((cur[2] - origin[2]) / spacing[2]))
        pts[s, 0] = cur
        counts[s] = 1
        if fa[ix, iy, iz] < fa_min or degenerate[ix, iy, iz]:
            continue
        d = dirs[ix, iy, iz].copy()
        # initial orientation: towards the target region
        if d[0] * aim[s, 0] + d[1] * aim[s, 1] + d[2] * aim[s, 2] < 0:
            d = -d
        for k in range(max_steps):
            nxt = cur + step * d
            jx = int(round((nxt[0] - origin[0]) / spacing[0]))
            jy = int(round((nxt[1] - origin[1]) / spacing[1]))
            jz = int(round((nxt[2] - origin[2]) / spacing[2]))
            if jx < 0 or jy < 0 or jz < 0 or jx >= nx or jy >= ny or jz >= nz:
                break
            if fa[jx, jy, jz] < fa_min or degenerate[jx, jy, jz]:
                break
            nd = dirs[jx, jy, jz].copy()
            dot = nd[0] * d[0] + nd[1] * d[1] + nd[2] * d[2]
            if dot < 0:
                nd = -nd
                dot = -dot
            if dot < cos_max:
                break
            cur = nxt
            d = nd
            pts[s, counts[s]] = cur
            counts[s] += 1
            g = cur - goal_c
            if g[0] * g[0] + g[1] * g[1] + g[2] * g[2] <= goal_r * goal_r:
                if (counts[s] - 1) * step >= min_len:
                    accepted[s] = True
                break
    return pts, counts, accepted


def seed_points(seed: SeedRegion, header) -> np.ndarray:
    """Voxel centres inside a spherical seed region, in lexicographic order."""
    lo = np.floor(header.world_to_index(np.asarray(seed.center_mm) - seed.radius_mm)).astype(int)
    hi = np.ceil(header.world_to_index(np.asarray(seed.center_mm) + seed.radius_mm)).astype(int)
    lo = np.clip(lo, 0, np.asarray(header.dims) - 1)
    hi = np.clip(hi, 0, np.asarray(header.dims) - 1)
    grids = np.meshgrid(*[np.arange(lo[k], hi[k] + 1) for k in range(3)], indexing="ij")
    ijk = np.stack([g.ravel() for g in grids], -1)
    xyz = header.index_to_world(ijk)
    inside = np.linalg.norm(xyz - np.asarray(seed.center_mm), axis=1) <= seed.radius_mm
    return xyz[inside]


def track_streamlines(fa: ScalarVolume, dirs: TensorVolume, seed_a: SeedRegion,
                      seed_b: SeedRegion, params: TrackingParams = TrackingParams(),
                      fields: TensorFields | None = None) -> list[Streamline]:
    """Track from every voxel of ``seed_a``; keep streamlines that reach ``seed_b``.

    Each step moves ``step_mm`` along the principal direction of the voxel
    nearest to the current point, sign-aligned with the previous step.  The
    first step of each streamline is oriented towards the centre of
    ``seed_b``.  Tracking stops on FA below ``fa_min``, a turn sharper
    than ``angle_max_deg``, a degenerate direction, leaving the grid, or
    exceeding ``max_len_mm``.

    ``fields`` may carry precomputed directions for ``dirs``.
    """
    header = fa.header
    if dirs.header.dims != header.dims:
        raise TrackingError("FA and tensor volumes must share a grid")
    for name, seed in (("seed_a", seed_a), ("seed_b", seed_b)):
        if not header.contains(seed.center_mm):
            raise TrackingError(f"{name} centre {seed.center_mm} lies outside the volume")
    if fields is None:
        fields = tensor_fields(dirs)
    step = params.resolved_step(header.spacing_mm)
    starts = seed_points(seed_a, header)
    if len(starts) == 0:
        return []
    aim = np.asarray(seed_b.center_mm) - starts
    max_steps = int(math.floor(params.max_len_mm / step))
    kernel = _track_kernel if _accel.enabled() else _accel.pyfunc(_track_kernel)
    pts, counts, accepted = kernel(
        np.ascontiguousarray(starts), fa.data.astype(np.float64), fields.directions,
        fields.degenerate, np.asarray(header.origin_mm), np.asarray(header.spacing_mm),
        step, params.fa_min, math.cos(math.radians(params.angle_max_deg)), max_steps,
        params.min_len_mm, np.asarray(seed_b.center_mm, dtype=np.float64),
        float(seed_b.radius_mm), np.ascontiguousarray(aim))
    return [Streamline(pts[s, :counts[s]].copy()) for s in range(len(starts)) if accepted[s]]


# -- centerline -------------------------------------------------------------

def resample_arclength(points, n: int) -> np.ndarray:
    """``n`` points uniformly spaced in arc length along a polyline."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        raise DegenerateCenterlineError("polyline has zero length")
    target = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(target, s, pts[:, k]) for k in range(3)], -1)


def _walk(pts, cum, L, n_steps):
    """Place points with chord length L along the polyline; return them and the final arc position."""
    out = [pts[0]]
    cur = pts[0]
    seg = 0
    pos = 0.0
    for _ in range(n_steps):
        found = False
        while seg < len(pts) - 1:
            a, b = pts[seg], pts[seg + 1]
            if np.linalg.norm(b - cur) >= L:
                d = b - a
                f = a - cur
                qa = d @ d
                qb = 2 * (f @ d)
                qc = f @ f - L * L
                disc = max(qb * qb - 4 * qa * qc, 0.0)
                u = (-qb + math.sqrt(disc)) / (2 * qa)
                u = min(max(u, 0.0), 1.0)
                cur = a + u * d
                pos = cum[seg] + u * math.sqrt(qa)
                found = True
                break
            seg += 1
        if not found:
            return out, math.inf
        out.append(cur)
    return out, pos


def resample_chord(points, P: int) -> np.ndarray:
    """P+1 points on the polyline, first and last fixed, equal chord lengths."""
    pts = np.asarray(points, dtype=np.float64)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0])
    pts = pts[keep]
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    total = cum[-1]
    if total == 0:
        raise DegenerateCenterlineError("polyline has zero length")
    chord = np.linalg.norm(pts[-1] - pts[0])
    lo, hi = chord / P, total / P
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        # the chord from the (P-1)th point to the end must come out equal to mid
        out, pos = _walk(pts, cum, mid, P - 1)
        if pos == math.inf or np.linalg.norm(pts[-1] - out[-1]) <= mid:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * hi:
            break
    out, _ = _walk(pts, cum, 0.5 * (lo + hi), P - 1)
    return np.vstack(out + [pts[-1]])


def derive_centerline(streamlines, P: int) -> Centerline:
    """Arc-length-correspondent mean of the streamlines, resampled to P+1 points."""
    if not streamlines:
        raise NoCenterlineError("no streamlines connect the two seed regions")
    if P < 1:
        raise DegenerateCenterlineError("need P >= 1")
    n_fine = max(4 * (P + 1), 64)
    resampled = np.stack([resample_arclength(s.points, n_fine) for s in streamlines])
    mean = resampled.mean(axis=0)
    return Centerline.from_points(resample_chord(mean, P))


def _fixed_normal(t):
    for axis in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        v = axis - (axis @ t) * t
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            return v / nv
    raise DegenerateCenterlineError("cannot seed a normal")  # pragma: no cover


def rmf_frames(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Double-reflection rotation-minimising frames along a polyline.

    Tangents are normalised central differences (one-sided at the ends).
    The first normal is world +z projected onto the first normal plane,
    or +x when +z is (nearly) parallel to the tangent.
    """
    x = np.asarray(points, dtype=np.float64)
    if len(x) < 2:
        raise DegenerateCenterlineError("need at least two points")
    seg = np.linalg.norm(np.diff(x, axis=0), axis=1)
    if np.any(seg <= 1e-12 * max(seg.max(), 1.0)):
        k = int(np.argmin(seg))
        raise DegenerateCenterlineError(f"points {k} and {k + 1} coincide")
    t = np.empty_like(x)
    t[0] = x[1] - x[0]
    t[-1] = x[-1] - x[-2]
    t[1:-1] = x[2:] - x[:-2]
    norms = np.linalg.norm(t, axis=1)
    if np.any(norms == 0):
        raise DegenerateCenterlineError("central difference vanishes (curve folds back)")
    t /= norms[:, None]
    r = np.empty_like(x)
    r[0] = _fixed_normal(t[0])
    for i in range(len(x) - 1):
        v1 = x[i + 1] - x[i]
        c1 = v1 @ v1
        rl = r[i] - (2.0 / c1) * (v1 @ r[i]) * v1
        tl = t[i] - (2.0 / c1) * (v1 @ t[i]) * v1
        v2 = t[i + 1] - tl
        c2 = v2 @ v2
        ri = rl if c2 <= 1e-300 else rl - (2.0 / c2) * (v2 @ rl) * v2
        ri = ri - (ri @ t[i + 1]) * t[i + 1]
        r[i + 1] = ri / np.linalg.norm(ri)
    n2 = np.cross(t, r)
    return t, r, n2


def frame_twist(tangents, normals1) -> np.ndarray:
    """Per-step rotation of the normal about the tangent, in radians.

    Measured against the minimal rotation carrying ``t[k]`` onto
    ``t[k+1]``; zero for a perfectly rotation-minimising frame.
    """
    t = np.asarray(tangents, dtype=np.float64)
    n = np.asarray(normals1, dtype=np.float64)
    out = np.empty(len(t) - 1)
    for k in range(len(t) - 1):
        a, b = t[k], t[k + 1]
        axis = np.cross(a, b)
        s = np.linalg.norm(axis)
        c = float(np.clip(a @ b, -1.0, 1.0))
        v = n[k]
        if s > 1e-15:
            u = axis / s
            v = v * c + np.cross(u, v) * s + u * (u @ v) * (1 - c)
        out[k] = math.atan2(np.cross(v, n[k + 1]) @ b, v @ n[k + 1])
    return out
