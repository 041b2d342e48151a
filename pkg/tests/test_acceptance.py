"""Acceptance suite: one test and one PASS/FAIL line per primary criterion.

The lines are printed as each criterion finishes (visible with ``-s``)
and repeated in an "acceptance criteria" section of the terminal summary.
Timing criteria are measured after a warm-up run, so numba compilation
is excluded.
"""
import contextlib
import csv
import json
import time

import numpy as np
import pytest

from fibercut import _accel
from fibercut.cli import main
from fibercut.cost import (MASK_KINDS, MASK_SIZES, binomial_row, estimate_mean_fa, make_mask)
from fibercut.graphcut import (SmoothnessParams, brute_force_min_cut, build_graph, max_flow)
from fibercut.phantom import (TorusSpec, centered_grid, curved_phantom, interior_fa, ring_point,
                              sinusoid, torus_phantom)
from fibercut.pipeline import PipelineConfig, prepare, report_configs, segment_prepared
from fibercut.evaluation import DscReport, DscRow, dsc, truth_within_span
from fibercut.surface import triangulate, voxelize
from fibercut.tensor import eigen_batch, fractional_anisotropy, matrix_to_tensor
from fibercut.tracking import Centerline
from fibercut.volume import ScalarVolume, VolumeHeader, save_volume

from test_graphcut import check_cut, field, random_field, random_network
from test_surface import cylinder_cloud, icosphere
from test_tensor import random_rotation

BACKENDS = ["numba", "numpy"] if _accel.NUMBA_AVAILABLE else ["numpy"]


@contextlib.contextmanager
def criterion(log, name):
    """Record PASS or FAIL for ``name`` and let any assertion propagate."""
    detail = {}
    try:
        yield detail
    except BaseException:
        line = f"FAIL  {name}  {detail.get('msg', '')}".rstrip()
        log.append(line)
        print(line)
        raise
    line = f"PASS  {name}  {detail.get('msg', '')}".rstrip()
    log.append(line)
    print(line)


def test_fa_unit(acceptance_log, rng):
    with criterion(acceptance_log, "FA unit tests") as d:
        worst = 0.0
        for c in (1e-4, 1.0, 7.5):
            worst = max(worst, abs(fractional_anisotropy((c, c, c))))
            worst = max(worst, abs(fractional_anisotropy((c, 0.0, 0.0)) - 1.0))
        assert worst <= 1e-12
        err211 = abs(fractional_anisotropy((2.0, 1.0, 1.0)) - np.sqrt(1 / 6))
        assert err211 <= 1e-12
        inv = 0.0
        for _ in range(1000):
            lam = rng.uniform(0, 5, 3)
            fa = fractional_anisotropy(lam)
            inv = max(inv, abs(fractional_anisotropy(lam * rng.uniform(1e-3, 1e3)) - fa),
                      abs(fractional_anisotropy(rng.permutation(lam)) - fa))
        assert inv <= 1e-12
        d["msg"] = f"(iso/aniso err {worst:.1e}, FA(2,1,1) err {err211:.1e}, invariance {inv:.1e})"


def test_eigen_decomposition(acceptance_log, rng):
    with criterion(acceptance_log, "Eigen-decomposition") as d:
        msgs = []
        for b in BACKENDS:
            with _accel.use_numba(b == "numba"):
                m = rng.normal(size=(1000, 3, 3))
                m = m + m.transpose(0, 2, 1)
                lam, axes = eigen_batch(matrix_to_tensor(m))
                rec = np.abs(np.einsum("nki,nk,nkj->nij", axes, lam, axes) - m).max()
                rot = 0.0
                for _ in range(1000):
                    R = random_rotation(rng)
                    want = np.sort(rng.uniform(0.1, 5, 3))[::-1]
                    got, _ = eigen_batch(matrix_to_tensor(R @ np.diag(want) @ R.T))
                    rot = max(rot, np.abs(got[0] - want).max())
                assert rec <= 1e-9 and rot <= 1e-9
                msgs.append(f"{b}: recon {rec:.1e}, rotated {rot:.1e}")
        d["msg"] = "(" + "; ".join(msgs) + ")"


def test_max_flow_exactness(acceptance_log, rng, e2e_runs):
    with criterion(acceptance_log, "Max-flow exactness") as d:
        for b in BACKENDS:
            with _accel.use_numba(b == "numba"):
                for _ in range(200):
                    g = random_network(rng, max_inner=8)
                    assert max_flow(g).flow_value == brute_force_min_cut(g)
        summaries = [s for run in e2e_runs.values() for s in run["summaries"]]
        assert summaries
        for s in summaries:
            assert s["flow_value"] == pytest.approx(s["cut_value"], rel=1e-9, abs=1e-12)
        d["msg"] = (f"(200 random networks x {len(BACKENDS)} backends exact; "
                    f"duality on {len(summaries)} pipeline runs)")


def test_graph_construction(acceptance_log):
    with criterion(acceptance_log, "Graph construction") as d:
        g = build_graph(field(np.ones((50, 30, 30))))
        assert g.n_nodes == 45_002
        inner = (g.tails < g.s) & (g.heads < g.s)
        n_inner = 50 * 30 * 29 + 2 * 50 * 30 * 30 + 2 * 49 * 30 * 30
        assert inner.sum() == n_inner and np.all(np.isinf(g.caps[inner]))
        c = np.array([[[1, 3, 2], [0, 0, 5]], [[2, 2, 2], [4, 1, 1]]], dtype=float)
        h = build_graph(field(c), SmoothnessParams(1, 1))
        s, t = 12, 13
        term = sorted((u, v, w) for u, v, w in zip(h.tails.tolist(), h.heads.tolist(),
                                                   h.caps.tolist()) if u == s or v == t)
        assert term == sorted([(s, 0, 1.0), (s, 1, 2.0), (2, t, 2.0), (s, 3, 0.0), (5, t, 5.0),
                               (s, 6, 2.0), (8, t, 2.0), (s, 9, 4.0), (10, t, 3.0), (11, t, 1.0)])
        d["msg"] = f"(45002 nodes, {n_inner} INF lattice arcs, 2x2x3 sign rule matches)"


def test_cut_structure(acceptance_log, rng):
    with criterion(acceptance_log, "Cut structure") as d:
        n = 0
        for b in BACKENDS:
            with _accel.use_numba(b == "numba"):
                for _ in range(60):
                    c, sp = random_field(rng)
                    g = build_graph(field(c), sp)
                    check_cut(max_flow(g), c, sp, g)
                    n += 1
        d["msg"] = f"({n} random cost fields: monotone rays, wrap-aware delta bounds)"


def test_masks(acceptance_log):
    with criterion(acceptance_log, "Masks") as d:
        worst = max(abs(make_mask(k, s).weights.sum() - 1.0) for k in MASK_KINDS for s in MASK_SIZES)
        assert worst <= 1e-12
        row = binomial_row(5)
        plane = [[a * b for b in row] for a in row]
        from fractions import Fraction
        assert plane[0][0] == Fraction(1, 256) and plane[2][2] == Fraction(36, 256)
        d["msg"] = f"(max |sum-1| = {worst:.1e}; corner 1/256, centre 36/256 exact)"


def test_mean_fa_estimator(acceptance_log, rng):
    with criterion(acceptance_log, "Mean-FA estimator") as d:
        h = VolumeHeader((20, 12, 15), (1, 1, 1))
        const = ScalarVolume(h, np.full(h.dims, 0.7, np.float32))
        cl = Centerline.from_points(np.array([2, 2, 1]) + np.outer(np.arange(20), [0.9, 0.3, 0.6]))
        worst = max(abs(estimate_mean_fa(const, cl, make_mask(k, s)) - 0.7)
                    for k in MASK_KINDS for s in MASK_SIZES)
        assert worst <= 1e-6
        rnd = ScalarVolume(h, rng.random(h.dims).astype(np.float32))
        a = estimate_mean_fa(rnd, cl, make_mask("mean", 1))
        b = estimate_mean_fa(rnd, cl, make_mask("gauss", 1))
        assert a == b
        d["msg"] = f"(10 variants within {worst:.1e} of 0.7; size-1 kinds identical)"


# -- end-to-end phantom runs -----------------------------------------------

def _torus_setup():
    spec = TorusSpec()  # 128^3 grid at 1 mm, ring 40 mm, tube diameter 10 mm
    bundle = torus_phantom(spec)
    seeds = [{"center_mm": list(ring_point(spec, a)), "radius_mm": 2.0} for a in (0.0, 90.0)]
    planes = 50
    return bundle, seeds, planes


def _curve_setup():
    grid = centered_grid()
    bundle = curved_phantom(10.0, 80.0, 5.0, grid)
    zmax = 0.5 * (grid.dims[2] - 1) - 8.0
    seeds = [{"center_mm": [float(c) for c in p], "radius_mm": 2.0}
             for p in sinusoid([-zmax, zmax], 10.0, 80.0)]
    return bundle, seeds, 100


def _run(bundle, seeds, planes):
    cfg = PipelineConfig.from_dict({
        "seeds": seeds,
        "lattice": {"planes": planes, "rays": 30, "samples": 30, "delta_mm": 0.5},
        "cost": {"mode": "auto", "mask_kind": "gauss", "mask_size": 3,
                 "fa_mean": round(interior_fa(), 6)},
    })
    # warm-up so the timed runs exclude JIT compilation
    warm = prepare(cfg, bundle.tensors)
    segment_prepared(cfg, warm)
    t0 = time.perf_counter()
    prep = prepare(cfg, bundle.tensors)
    prep_seconds = time.perf_counter() - t0
    clipped = truth_within_span(bundle.truth, prep.centerline)
    rows, summaries, run_seconds = [], [], []
    for (kind, size), c in report_configs(cfg):
        t1 = time.perf_counter()
        res = segment_prepared(c, prep)
        run_seconds.append(prep_seconds + time.perf_counter() - t1)
        summaries.append(res.summary)
        rows.append(DscRow(kind, size, res.fa_mean, dsc(res.labels, clipped)))
    return {"report": DscReport(tuple(rows)).sorted(), "summaries": summaries,
            "run_seconds": run_seconds}


@pytest.fixture(scope="module")
def e2e_runs():
    return {"torus": _run(*_torus_setup()), "curve": _run(*_curve_setup())}


def test_end_to_end_phantoms(acceptance_log, e2e_runs):
    with criterion(acceptance_log, "End-to-end phantom analog") as d:
        parts, problems = [], []
        for name, run in e2e_runs.items():
            rows = run["report"].rows
            manual = [r for r in rows if r.filter == "manual"][0]
            auto = [r for r in rows if r.filter != "manual"]
            lo = min(r.dsc for r in rows if r.dsc is not None)
            gap = max(abs(r.dsc - manual.dsc) for r in auto)
            seg = max(s["segmentation_seconds"] for s in run["summaries"])
            fam = max(s["stage_seconds"]["fa_mean"] for s in run["summaries"])
            total = max(run["run_seconds"])
            if len(auto) != 10 or any(r.failed for r in rows):
                problems.append(f"{name}: failed rows")
            if lo < 0.90:
                problems.append(f"{name}: min DSC {lo:.4f} < 0.90")
            if gap > 0.05:
                problems.append(f"{name}: auto/manual gap {gap:.4f} > 0.05")
            if seg >= 10 or fam >= 2 or total >= 60:
                problems.append(f"{name}: timing seg {seg:.2f}s fa_mean {fam:.3f}s run {total:.2f}s")
            parts.append(f"{name}: min DSC {lo:.4f}, max |auto-manual| {gap:.4f}, "
                         f"seg {seg:.2f}s, fa_mean {fam:.3f}s, run {total:.2f}s")
        d["msg"] = "(" + "; ".join(parts + problems) + ")"
        assert not problems, problems


def test_geometry(acceptance_log, rng):
    with criterion(acceptance_log, "Geometry") as d:
        sphere = icosphere(10.0, 4)
        hdr = VolumeHeader((48, 48, 48), (0.5,) * 3, (-11.75,) * 3, 1, "u8")
        v_sphere = voxelize(sphere, hdr).count * 0.125
        e_sphere = abs(v_sphere / (4 / 3 * np.pi * 1000) - 1)
        bc, cl = cylinder_cloud(49, 29, 6.0, 30.0)
        cyl = triangulate(bc, cl)
        hdr = VolumeHeader((40, 40, 80), (0.5,) * 3, (-9.75, -9.75, -19.75), 1, "u8")
        v_cyl = voxelize(cyl, hdr).count * 0.125
        e_cyl = abs(v_cyl / (np.pi * 36 * 30) - 1)
        assert e_sphere <= 0.05 and e_cyl <= 0.05
        for _ in range(20):
            P, R = int(rng.integers(1, 50)), int(rng.integers(2, 30))
            bc, cl = cylinder_cloud(P, R, 3.0, 10.0)
            m = triangulate(type(bc)(bc.points + rng.normal(0, 0.1, bc.points.shape)), cl)
            assert m.is_watertight() and m.euler_characteristic() == 2
        d["msg"] = (f"(sphere {100 * e_sphere:.2f}%, cylinder {100 * e_cyl:.2f}% off; "
                    "20 random clouds closed, V-E+F=2)")


def test_determinism(acceptance_log, tmp_path):
    with criterion(acceptance_log, "Determinism") as d:
        grid = centered_grid((128, 128, 32))
        bundle = torus_phantom(TorusSpec(grid=grid))
        save_volume(bundle.tensors, tmp_path / "p_tensors")
        save_volume(bundle.truth, tmp_path / "p_truth")
        outs = []
        for run in ("a", "b"):
            cfg = {
                "paths": {"tensors": "p_tensors", "truth": "p_truth",
                          "mesh": f"{run}/mesh.obj", "labels": f"{run}/labels",
                          "summary": f"{run}/summary.json"},
                "seeds": [{"center_mm": [40, 0, 0], "radius_mm": 2},
                          {"center_mm": [0, 40, 0], "radius_mm": 2}],
                "cost": {"fa_mean": 0.799022},
                "report": f"{run}/report.csv",
            }
            (tmp_path / f"{run}.json").write_text(json.dumps(cfg))
            assert main(["segment", "--config", str(tmp_path / f"{run}.json")]) == 0
            assert main(["report", "--config", str(tmp_path / f"{run}.json")]) == 0
            outs.append({name: (tmp_path / run / name).read_bytes()
                         for name in ("mesh.obj", "labels.json", "labels.raw", "report.csv")})
        same = [name for name in outs[0] if outs[0][name] == outs[1][name]]
        assert len(same) == 4
        assert len(list(csv.reader((tmp_path / "a" / "report.csv").open()))) == 12
        d["msg"] = "(mesh, labels and CSV byte-identical across two invocations)"
