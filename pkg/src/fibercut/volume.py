"""Tensor, scalar and label volumes stored as a JSON header plus raw payload.

On disk a volume ``name`` is the pair ``name.json`` / ``name.raw``.  The
payload is little-endian, x-fastest, with tensor components interleaved
per voxel in the order (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).

In memory the data array is indexed ``data[x, y, z]`` (plus a trailing
component axis for tensors) and positions are in millimetres, with
``origin_mm`` the world position of the centre of voxel (0, 0, 0).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .errors import VolumeFormatError

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    components: int = 1
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))
        if len(self.dims) != 3 or len(self.spacing_mm) != 3 or len(self.origin_mm) != 3:
            raise VolumeFormatError("dims, spacing_mm and origin_mm must be triples")
        if min(self.dims) < 1:
            raise VolumeFormatError(f"dims must be >= 1, got {self.dims}")
        if min(self.spacing_mm) <= 0:
            raise VolumeFormatError(f"spacing must be > 0, got {self.spacing_mm}")
        if self.dtype not in _DTYPES:
            raise VolumeFormatError(f"unknown dtype {self.dtype!r}")
        if self.components not in (1, 6):
            raise VolumeFormatError(f"components must be 1 or 6, got {self.components}")
        if self.components == 6 and self.dtype != "f32":
            raise VolumeFormatError("tensor volumes must be f32")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def payload_bytes(self) -> int:
        return self.n_voxels * self.components * _DTYPES[self.dtype].itemsize

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz

    def with_kind(self, components: int, dtype: str) -> "VolumeHeader":
        return VolumeHeader(self.dims, self.spacing_mm, self.origin_mm, components, dtype)

    def index_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64)
        return np.asarray(self.origin_mm) + ijk * np.asarray(self.spacing_mm)

    def world_to_index(self, xyz) -> np.ndarray:
        """Continuous voxel coordinates of world points (mm)."""
        xyz = np.asarray(xyz, dtype=np.float64)
        return (xyz - np.asarray(self.origin_mm)) / np.asarray(self.spacing_mm)

    def nearest_voxel(self, xyz) -> np.ndarray:
        """Integer voxel index nearest to each world point, clamped to the grid."""
        idx = np.rint(self.world_to_index(xyz)).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.dims) - 1)

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel centre, shape (nx, ny, nz, 3)."""
        axes = [self.origin_mm[k] + self.spacing_mm[k] * np.arange(self.dims[k]) for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, xyz) -> bool:
        """True if the point lies inside the voxel-centre bounding box."""
        u = self.world_to_index(xyz)
        return bool(np.all(u >= 0) and np.all(u <= np.asarray(self.dims) - 1))

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing_mm),
            "origin_mm": list(self.origin_mm),
            "components": self.components,
            "dtype": self.dtype,
        }

    @classmethod
    def from_json(cls, d: dict) -> "VolumeHeader":
        try:
            return cls(tuple(d["dims"]), tuple(d["spacing_mm"]), tuple(d["origin_mm"]),
                       int(d["components"]), str(d["dtype"]))
        except KeyError as exc:
            raise VolumeFormatError(f"header is missing key {exc}") from None


def _check_data(header: VolumeHeader, data: np.ndarray):
    shape = header.dims + ((6,) if header.components == 6 else ())
    if data.shape != shape:
        raise VolumeFormatError(f"data shape {data.shape} does not match header {shape}")


@dataclass(frozen=True, eq=False)
class TensorVolume:
    """Field of symmetric tensors, ``data[x, y, z] = (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz)``."""

    header: VolumeHeader
    data: np.ndarray

    def __post_init__(self):
        if self.header.components != 6:
            raise VolumeFormatError("TensorVolume needs components=6")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float32))
        _check_data(self.header, self.data)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    header: VolumeHeader
    data: np.ndarray

    def __post_init__(self):
        if self.header.components != 1 or self.header.dtype != "f32":
            raise VolumeFormatError("ScalarVolume needs components=1, dtype=f32")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float32))
        _check_data(self.header, self.data)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Binary segmentation: 0 background, 1 bundle."""

    header: VolumeHeader
    data: np.ndarray

    def __post_init__(self):
        if self.header.components != 1 or self.header.dtype != "u8":
            raise VolumeFormatError("LabelVolume needs components=1, dtype=u8")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.uint8))
        _check_data(self.header, self.data)
        if self.data.size and self.data.max() > 1:
            raise VolumeFormatError("label values must be 0 or 1")

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def load_volume(path):
    """Load ``<path>.json`` + ``<path>.raw`` into the matching volume type."""
    hpath, rpath = _paths(path)
    if not hpath.exists():
        raise FileNotFoundError(f"missing header {hpath}")
    if not rpath.exists():
        raise FileNotFoundError(f"missing payload {rpath}")
    header = VolumeHeader.from_json(json.loads(hpath.read_text()))
    raw = rpath.read_bytes()
    if len(raw) != header.payload_bytes:
        raise VolumeFormatError(
            f"{rpath}: payload is {len(raw)} bytes, header implies {header.payload_bytes}")
    flat = np.frombuffer(raw, dtype=_DTYPES[header.dtype])
    nx, ny, nz = header.dims
    if header.components == 6:
        data = flat.reshape(nz, ny, nx, 6).transpose(2, 1, 0, 3)
    else:
        data = flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    data = np.ascontiguousarray(data)
    if header.dtype == "f32" and not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"{rpath}: payload contains NaN or Inf")
    if header.components == 6:
        return TensorVolume(header, data)
    if header.dtype == "f32":
        return ScalarVolume(header, data)
    return LabelVolume(header, data)


def save_volume(volume, path) -> None:
    header = volume.header
    data = volume.data
    if header.dtype == "f32" and not np.all(np.isfinite(data)):
        raise VolumeFormatError("refusing to save a volume containing NaN or Inf")
    if data.ndim == 4:
        ordered = data.transpose(2, 1, 0, 3)
    else:
        ordered = data.transpose(2, 1, 0)
    payload = np.ascontiguousarray(ordered, dtype=_DTYPES[header.dtype]).tobytes()
    hpath, rpath = _paths(path)
    hpath.parent.mkdir(parents=True, exist_ok=True)
    hpath.write_text(json.dumps(header.to_json(), indent=2) + "\n")
    rpath.write_bytes(payload)


# -- trilinear interpolation ------------------------------------------------

def _axis_weights(u, n):
    # clamp-to-edge; returns the lower index and the fractional weight
    if n == 1:
        return 0, 0.0
    if u <= 0.0:
        return 0, 0.0
    if u >= n - 1:
        return n - 2, 1.0
    i0 = int(math.floor(u))
    if i0 > n - 2:
        i0 = n - 2
    return i0, u - i0


@_accel.njit
def _trilinear_kernel(data, u):
    nx, ny, nz = data.shape
    out = np.empty(u.shape[0])
    for k in range(u.shape[0]):
        ix, fx = _axis_weights_nb(u[k, 0], nx)
        iy, fy = _axis_weights_nb(u[k, 1], ny)
        iz, fz = _axis_weights_nb(u[k, 2], nz)
        jx = min(ix + 1, nx - 1)
        jy = min(iy + 1, ny - 1)
        jz = min(iz + 1, nz - 1)
        c00 = data[ix, iy, iz] * (1 - fx) + data[jx, iy, iz] * fx
        c10 = data[ix, jy, iz] * (1 - fx) + data[jx, jy, iz] * fx
        c01 = data[ix, iy, jz] * (1 - fx) + data[jx, iy, jz] * fx
        c11 = data[ix, jy, jz] * (1 - fx) + data[jx, jy, jz] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[k] = c0 * (1 - fz) + c1 * fz
    return out


_axis_weights_nb = _accel.njit(_axis_weights)


def _trilinear_numpy(data, u):
    dims = np.asarray(data.shape)
    hi = np.maximum(dims - 2, 0)
    uc = np.clip(u, 0.0, np.maximum(dims - 1, 0).astype(np.float64))
    i0 = np.minimum(np.floor(uc).astype(np.int64), hi)
    f = np.where(dims > 1, uc - i0, 0.0)
    i1 = np.minimum(i0 + 1, dims - 1)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    (ix, iy, iz), (jx, jy, jz) = i0.T, i1.T
    # same lerp order as the compiled kernel, so both paths agree bit for bit
    c00 = data[ix, iy, iz] * (1 - fx) + data[jx, iy, iz] * fx
    c10 = data[ix, jy, iz] * (1 - fx) + data[jx, jy, iz] * fx
    c01 = data[ix, iy, jz] * (1 - fx) + data[jx, iy, jz] * fx
    c11 = data[ix, jy, jz] * (1 - fx) + data[jx, jy, jz] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def trilinear_sample_many(vol: ScalarVolume, points_mm) -> np.ndarray:
    """Trilinear samples of ``vol`` at world points of shape (..., 3)."""
    pts = np.asarray(points_mm, dtype=np.float64)
    shape = pts.shape[:-1]
    u = np.ascontiguousarray(vol.header.world_to_index(pts.reshape(-1, 3)))
    if _accel.enabled():
        out = _trilinear_kernel(vol.data, u)
    else:
        out = _trilinear_numpy(vol.data, u)
    return out.reshape(shape)


def trilinear_sample(vol: ScalarVolume, point_mm) -> float:
    """Trilinear interpolation at one world point; outside points clamp to the edge."""
    return float(trilinear_sample_many(vol, np.asarray(point_mm, dtype=np.float64)[None])[0])
