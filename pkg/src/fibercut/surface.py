"""Boundary points from a cut, closed tube mesh, and parity voxelization."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .cost import CostField
from .errors import DegenerateCutError, ParityError
from .graphcut import CutResult
from .tracking import Centerline
from .volume import LabelVolume, VolumeHeader

# Offsets applied to ray origins so rays never pass exactly through mesh
# vertices or edges that lie on the voxel lattice.
_JITTER = (1.2345671e-7, 7.6543217e-8)


@dataclass(frozen=True, eq=False)
class BoundaryCloud:
    points: np.ndarray  # (P+1, R+1, 3)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3) mm
    triangles: np.ndarray  # (F, 3) int, counter-clockwise seen from outside

    def edges(self) -> np.ndarray:
        """Undirected unique edges, (E, 2)."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def is_watertight(self) -> bool:
        """Every directed edge is matched by exactly one opposite edge."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        und, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        if np.any(counts != 2):
            return False
        directed = np.unique(e, axis=0)
        return len(directed) == len(e)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        return int(len(used) - len(self.edges()) + len(self.triangles))

    def area(self) -> float:
        v = self.vertices[self.triangles]
        return float(0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum())

    def volume(self) -> float:
        """Signed enclosed volume; positive for outward orientation."""
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def degenerate_triangles(self, eps: float = 1e-12) -> np.ndarray:
        v = self.vertices[self.triangles]
        a = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
        return np.flatnonzero(a <= eps)


def extract_boundary(cut: CutResult, cf: CostField) -> BoundaryCloud:
    """Midpoint between the last interior and first exterior sample of each ray."""
    bidx = np.asarray(cut.boundary_index)
    I = cf.params.I
    bad = np.argwhere((bidx < 0) | (bidx >= I))
    if len(bad):
        p, r = (int(x) for x in bad[0])
        raise DegenerateCutError(
            f"cut at ray extreme (boundary index {int(bidx[p, r])}) on plane {p}, ray {r}"
            f" ({len(bad)} rays affected)", ray=(p, r))
    i = bidx[..., None, None]
    x0 = np.take_along_axis(cf.points, i, axis=2)[:, :, 0]
    x1 = np.take_along_axis(cf.points, i + 1, axis=2)[:, :, 0]
    return BoundaryCloud(x0 + 0.5 * (x1 - x0))


def triangulate(bc: BoundaryCloud, centerline: Centerline) -> Mesh:
    """Ring-closed quad strips split in two, plus fan caps at both ends.

    Vertex ``p*(R+1) + r`` is b(p, r); the two cap centres (first and
    last centerline points) are appended last.
    """
    pts = np.asarray(bc.points, dtype=np.float64)
    P1, R1 = pts.shape[:2]
    ids = np.arange(P1 * R1).reshape(P1, R1)
    a = ids[:-1]
    b = np.roll(ids, -1, axis=1)[:-1]
    c = np.roll(ids, -1, axis=1)[1:]
    d = ids[1:]
    side = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                           np.stack([a, c, d], -1).reshape(-1, 3)])
    c0, c1 = P1 * R1, P1 * R1 + 1
    r = np.arange(R1)
    rn = np.roll(r, -1)
    cap0 = np.stack([np.full(R1, c0), ids[0, rn], ids[0, r]], -1)
    cap1 = np.stack([np.full(R1, c1), ids[-1, r], ids[-1, rn]], -1)
    verts = np.vstack([pts.reshape(-1, 3), centerline.points[0], centerline.points[-1]])
    tris = np.concatenate([side, cap0, cap1]).astype(np.int64)
    return Mesh(verts, tris)


def write_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(v.split("/")[0]) - 1 for v in parts[1:4]])
    return Mesh(np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64))


# -- voxelization -----------------------------------------------------------

@_accel.njit
def _row_hits_kernel(tri, n1, n2, o1, o2, s1, s2, j1, j2):
    # tri: (F, 3, 3) with the casting axis first; rows indexed by (a, b)
    nf = tri.shape[0]
    cap = 16
    rows = np.empty(cap, np.int64)
    xs = np.empty(cap)
    m = 0
    for f in range(nf):
        y0, z0 = tri[f, 0, 1], tri[f, 0, 2]
        y1, z1 = tri[f, 1, 1], tri[f, 1, 2]
        y2, z2 = tri[f, 2, 1], tri[f, 2, 2]
        lo_a = int(np.ceil((min(y0, y1, y2) - o1 - j1) / s1))
        hi_a = int(np.floor((max(y0, y1, y2) - o1 - j1) / s1))
        lo_b = int(np.ceil((min(z0, z1, z2) - o2 - j2) / s2))
        hi_b = int(np.floor((max(z0, z1, z2) - o2 - j2) / s2))
        lo_a = max(lo_a, 0)
        lo_b = max(lo_b, 0)
        hi_a = min(hi_a, n1 - 1)
        hi_b = min(hi_b, n2 - 1)
        det = (y1 - y0) * (z2 - z0) - (y2 - y0) * (z1 - z0)
        if det == 0.0:
            continue
        for a in range(lo_a, hi_a + 1):
            py = o1 + a * s1 + j1
            for b in range(lo_b, hi_b + 1):
                pz = o2 + b * s2 + j2
                w1 = ((py - y0) * (z2 - z0) - (y2 - y0) * (pz - z0)) / det
                w2 = ((y1 - y0) * (pz - z0) - (py - y0) * (z1 - z0)) / det
                w0 = 1.0 - w1 - w2
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if m == cap:
                    cap *= 2
                    nr = np.empty(cap, np.int64)
                    nx_ = np.empty(cap)
                    nr[:m] = rows[:m]
                    nx_[:m] = xs[:m]
                    rows = nr
                    xs = nx_
                rows[m] = a * n2 + b
                xs[m] = w0 * tri[f, 0, 0] + w1 * tri[f, 1, 0] + w2 * tri[f, 2, 0]
                m += 1
    return rows[:m], xs[:m]


def _row_hits_numpy(tri, n1, n2, o1, o2, s1, s2, j1, j2):
    rows, xs = [], []
    for f in range(tri.shape[0]):
        (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = tri[f]
        det = (y1 - y0) * (z2 - z0) - (y2 - y0) * (z1 - z0)
        if det == 0.0:
            continue
        lo_a = max(int(np.ceil((min(y0, y1, y2) - o1 - j1) / s1)), 0)
        hi_a = min(int(np.floor((max(y0, y1, y2) - o1 - j1) / s1)), n1 - 1)
        lo_b = max(int(np.ceil((min(z0, z1, z2) - o2 - j2) / s2)), 0)
        hi_b = min(int(np.floor((max(z0, z1, z2) - o2 - j2) / s2)), n2 - 1)
        if hi_a < lo_a or hi_b < lo_b:
            continue
        a, b = np.meshgrid(np.arange(lo_a, hi_a + 1), np.arange(lo_b, hi_b + 1), indexing="ij")
        py = o1 + a * s1 + j1
        pz = o2 + b * s2 + j2
        w1 = ((py - y0) * (z2 - z0) - (y2 - y0) * (pz - z0)) / det
        w2 = ((y1 - y0) * (pz - z0) - (py - y0) * (z1 - z0)) / det
        w0 = 1.0 - w1 - w2
        hit = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        rows.append((a * n2 + b)[hit])
        xs.append((w0 * x0 + w1 * x1 + w2 * x2)[hit])
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(rows).astype(np.int64), np.concatenate(xs)


def voxelize(mesh: Mesh, header: VolumeHeader, axis: int = 0) -> LabelVolume:
    """Label voxel centres inside a closed mesh by row-wise parity ray casting.

    Rays run parallel to ``axis`` through each row of voxel centres.  A
    row with an odd number of surface crossings means the mesh is not
    closed and raises :class:`ParityError`.
    """
    perm = [axis] + [k for k in range(3) if k != axis]
    dims = [header.dims[k] for k in perm]
    spacing = [header.spacing_mm[k] for k in perm]
    origin = [header.origin_mm[k] for k in perm]
    tri = np.ascontiguousarray(mesh.vertices[mesh.triangles][:, :, perm])
    j1, j2 = _JITTER[0] * spacing[1], _JITTER[1] * spacing[2]
    args = (tri, dims[1], dims[2], origin[1], origin[2], spacing[1], spacing[2], j1, j2)
    if _accel.enabled():
        rows, xs = _row_hits_kernel(*args)
    else:
        rows, xs = _row_hits_numpy(*args)
    n_rows = dims[1] * dims[2]
    counts = np.bincount(rows, minlength=n_rows)
    odd = np.flatnonzero(counts % 2)
    if odd.size:
        a, b = divmod(int(odd[0]), dims[2])
        raise ParityError(f"{odd.size} rows have an odd number of crossings (first: row {a},{b})")
    order = np.lexsort((xs, rows))
    rows, xs = rows[order], xs[order]
    enter, leave = xs[0::2], xs[1::2]
    row = rows[0::2]
    # voxel centres strictly inside [enter, leave]
    first = np.ceil((enter - origin[0]) / spacing[0]).astype(np.int64)
    last = np.floor((leave - origin[0]) / spacing[0]).astype(np.int64)
    first = np.clip(first, 0, dims[0])
    last = np.clip(last, -1, dims[0] - 1)
    ok = last >= first
    diff = np.zeros((n_rows, dims[0] + 1), np.int32)
    np.add.at(diff, (row[ok], first[ok]), 1)
    np.add.at(diff, (row[ok], last[ok] + 1), -1)
    inside = np.cumsum(diff[:, :-1], axis=1) > 0
    labels = inside.reshape(dims[1], dims[2], dims[0]).transpose(2, 0, 1)
    labels = np.moveaxis(labels, [0, 1, 2], perm)
    return LabelVolume(header.with_kind(1, "u8"), labels.astype(np.uint8))
