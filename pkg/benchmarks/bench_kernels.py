"""Time each hot kernel on the numba path and on the pure numpy/python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Every case runs once untimed first so numba compilation is excluded.
The max-flow fallback is interpreted python, so its lattice is smaller
than the full-size one used in practice.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fibercut import _accel
from fibercut.cost import CostField, make_mask, mask_means
from fibercut.graphcut import SmoothnessParams, build_graph, max_flow
from fibercut.phantom import TorusSpec, centered_grid, ring_point, torus_phantom
from fibercut.surface import BoundaryCloud, triangulate, voxelize
from fibercut.tensor import eigen_batch, matrix_to_tensor, tensor_fields
from fibercut.tracking import Centerline, SeedRegion, track_streamlines
from fibercut.volume import ScalarVolume, VolumeHeader, trilinear_sample_many


def build_cases(quick: bool):
    rng = np.random.default_rng(0)
    n_t = 20_000 if quick else 200_000
    m = rng.normal(size=(n_t, 3, 3))
    t6 = matrix_to_tensor(m + m.transpose(0, 2, 1))

    vol = ScalarVolume(VolumeHeader((64, 64, 64), (1, 1, 1)), rng.random((64, 64, 64)).astype(np.float32))
    pts = rng.uniform(0, 63, (50 * 30 * 31 if quick else 500_000, 3))
    cpts = rng.uniform(0, 63, (500 if quick else 5000, 3))
    mask = make_mask("gauss", 5)

    shape = (6, 12, 12) if quick else (12, 20, 20)
    edge = rng.integers(3, shape[2] - 3, shape[:2] + (1,))
    costs = (np.arange(shape[2]) > edge) + 0.2 * rng.random(shape)
    net = build_graph(CostField(None, None, None, costs, 0.0), SmoothnessParams(2, 2))

    cl = Centerline.from_points(np.outer(np.linspace(-15, 15, 50), [0, 0, 1]))
    th = 2 * np.pi * np.arange(30) / 30
    ring = 6.0 * (np.cos(th)[None, :, None] * cl.normals1[:, None] + np.sin(th)[None, :, None] * cl.normals2[:, None])
    mesh = triangulate(BoundaryCloud(cl.points[:, None] + ring), cl)
    grid = VolumeHeader((40, 40, 80), (0.5,) * 3, (-9.75, -9.75, -19.75), 1, "u8")

    spec = TorusSpec(grid=centered_grid((128, 128, 32)))
    torus = torus_phantom(spec)
    fields = tensor_fields(torus.tensors)
    seeds = SeedRegion(ring_point(spec, 0), 2.0), SeedRegion(ring_point(spec, 90), 2.0)

    return {
        f"jacobi eigen ({n_t} tensors)": lambda: eigen_batch(t6),
        f"trilinear ({len(pts)} points)": lambda: trilinear_sample_many(vol, pts),
        f"gauss-5 mask means ({len(cpts)} centres)": lambda: mask_means(vol, cpts, mask),
        f"max-flow ({net.n_nodes} nodes)": lambda: max_flow(net),
        f"voxelize ({len(mesh.triangles)} triangles)": lambda: voxelize(mesh, grid),
        "tracking (torus quarter arc)": lambda: track_streamlines(fields.fa, torus.tensors, *seeds, fields=fields),
    }


def timeit(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = build_cases(args.quick)
    print(f"{'kernel':<40} {'numba [s]':>10} {'fallback [s]':>13} {'speedup':>8}")
    for name, fn in cases.items():
        with _accel.use_numba(True):
            t_nb = timeit(fn, args.repeat)
        with _accel.use_numba(False):
            t_py = timeit(fn, max(1, args.repeat // 3))
        print(f"{name:<40} {t_nb:>10.4f} {t_py:>13.4f} {t_py / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
