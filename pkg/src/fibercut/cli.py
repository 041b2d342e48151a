"""Command line driver: ``fibercut {fa,track,phantom,segment,dsc,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import phantom as phantom_mod
from .cost import MASK_KINDS, MASK_SIZES, COST_KINDS, LatticeParams
from .errors import ConfigError, FibercutError
from .evaluation import dsc
from .graphcut import SmoothnessParams
from .pipeline import PipelineConfig, prepare, run_report, run_segment
from .tensor import fa_volume
from .volume import LabelVolume, TensorVolume, load_volume, save_volume

log = logging.getLogger("fibercut")


def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="pipeline JSON config")
    p.add_argument("--tensors", help="tensor volume (overrides paths.tensors)")
    p.add_argument("--planes", type=int)
    p.add_argument("--rays", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--delta-mm", type=float)
    p.add_argument("--mask", choices=MASK_KINDS)
    p.add_argument("--mask-size", type=int, choices=MASK_SIZES)
    p.add_argument("--fa-mean", type=float, help="manual FA mean (bypasses mask estimation)")
    p.add_argument("--cost-kind", choices=COST_KINDS)
    p.add_argument("--delta-x", type=int)
    p.add_argument("--delta-z", type=int)
    p.add_argument("--force-inner", action="store_true", default=None)


def _apply_overrides(cfg: PipelineConfig, a) -> PipelineConfig:
    lat = cfg.lattice
    lattice = LatticeParams(
        P=(a.planes - 1) if a.planes is not None else lat.P,
        R=(a.rays - 1) if a.rays is not None else lat.R,
        I=(a.samples - 1) if a.samples is not None else lat.I,
        delta_mm=a.delta_mm if a.delta_mm is not None else lat.delta_mm,
    )
    sm = SmoothnessParams(a.delta_x if a.delta_x is not None else cfg.smoothness.delta_x,
                          a.delta_z if a.delta_z is not None else cfg.smoothness.delta_z)
    cost = cfg.cost
    changes = {}
    if a.mask is not None or a.mask_size is not None:
        changes.update(mode="auto")
        if a.mask is not None:
            changes["mask_kind"] = a.mask
        if a.mask_size is not None:
            changes["mask_size"] = a.mask_size
    if a.fa_mean is not None:
        changes.update(mode="manual", fa_mean=a.fa_mean)
    if a.cost_kind is not None:
        changes["kind"] = a.cost_kind
    cost = dataclasses.replace(cost, **changes)
    paths = dict(cfg.paths)
    if a.tensors:
        paths["tensors"] = a.tensors
    if getattr(a, "dump_graph", None):
        paths["graph_dump"] = a.dump_graph
    force = cfg.force_inner if a.force_inner is None else a.force_inner
    return PipelineConfig(seeds=cfg.seeds, tracking=cfg.tracking, lattice=lattice, smoothness=sm,
                          force_inner=force, cost=cost, paths=paths,
                          report=getattr(a, "report", None) or cfg.report)


def cmd_fa(a) -> int:
    vol = load_volume(a.input)
    if not isinstance(vol, TensorVolume):
        raise FibercutError(f"{a.input} is not a tensor volume")
    save_volume(fa_volume(vol), a.output)
    return 0


def cmd_track(a) -> int:
    cfg = _apply_overrides(PipelineConfig.load(a.config), a)
    tensors = load_volume(cfg.paths["tensors"])
    prep = prepare(cfg, tensors)
    prep.centerline.save(a.out)
    if a.streamlines:
        Path(a.streamlines).write_text(json.dumps([s.points.tolist() for s in prep.streamlines]))
    print(f"{len(prep.streamlines)} streamlines, centerline with {len(prep.centerline.points)} points")
    return 0


def cmd_phantom(a) -> int:
    if a.kind == "torus":
        grid = phantom_mod.centered_grid(tuple(a.dims or (128, 128, 128)), a.spacing)
        spec = phantom_mod.TorusSpec(ring_radius_mm=a.ring_radius, tube_radius_mm=a.tube_radius,
                                     noise_sigma=a.noise, grid=grid, seed=a.seed)
        bundle = phantom_mod.torus_phantom(spec)
        seeds = [phantom_mod.ring_point(spec, 0.0), phantom_mod.ring_point(spec, 90.0)]
    else:
        grid = phantom_mod.centered_grid(tuple(a.dims or (128, 128, 128)), a.spacing)
        bundle = phantom_mod.curved_phantom(a.amplitude, a.wavelength, a.tube_radius, grid,
                                            noise_sigma=a.noise, seed=a.seed)
        zmax = 0.5 * (grid.dims[2] - 1) * grid.spacing_mm[2] - 8.0
        seeds = [tuple(p) for p in phantom_mod.sinusoid([-zmax, zmax], a.amplitude, a.wavelength)]
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(bundle.tensors, f"{out}_tensors")
    save_volume(bundle.truth, f"{out}_truth")
    bundle.analytic_centerline.save(f"{out}_centerline.json")
    if a.write_config:
        cfg_path = Path(a.write_config)
        rel = Path(os.path.relpath(out, cfg_path.parent or "."))
        planes = 50 if a.kind == "torus" else 100
        config = {
            "paths": {"tensors": f"{rel}_tensors", "truth": f"{rel}_truth",
                      "mesh": f"{rel}_out/mesh.obj", "labels": f"{rel}_out/labels",
                      "summary": f"{rel}_out/summary.json"},
            "seeds": [{"center_mm": [float(c) for c in s], "radius_mm": 2.0} for s in seeds],
            "lattice": {"planes": planes, "rays": 30, "samples": 30, "delta_mm": 0.5},
            "smoothness": {"delta_x": 2, "delta_z": 2},
            "cost": {"mode": "auto", "mask_kind": "gauss", "mask_size": 3,
                     "fa_mean": round(phantom_mod.interior_fa(), 6)},
            "report": f"{rel}_out/report.csv",
        }
        cfg_path.write_text(json.dumps(config, indent=2) + "\n")
    return 0


def cmd_segment(a) -> int:
    cfg = _apply_overrides(PipelineConfig.load(a.config), a)
    res = run_segment(cfg)
    s = res.summary
    line = f"fa_mean={s['fa_mean']:.6f} flow={s['flow_value']:.6g} nodes={s['node_count']}"
    if "dsc" in s:
        line += f" dsc={s['dsc']:.6f}"
    print(line)
    return 0


def cmd_dsc(a) -> int:
    va, vb = load_volume(a.a), load_volume(a.b)
    if not (isinstance(va, LabelVolume) and isinstance(vb, LabelVolume)):
        raise FibercutError("dsc needs two label volumes")
    print(f"{dsc(va, vb):.6f}")
    return 0


def cmd_report(a) -> int:
    cfg = _apply_overrides(PipelineConfig.load(a.config), a)
    if not cfg.paths.get("truth"):
        raise ConfigError("report needs paths.truth")
    tensors = load_volume(cfg.paths["tensors"])
    truth = load_volume(cfg.paths["truth"])
    rep = run_report(cfg, tensors, truth)
    target = cfg.report
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        rep.write_csv(target)
    else:
        sys.stdout.write(rep.to_csv())
    for row in rep.rows:
        if row.failed:
            log.error("row %s/%s failed: %s", row.filter, row.size, row.error)
    return 1 if rep.any_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibercut", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fa", help="compute the FA map of a tensor volume")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_fa)

    p = sub.add_parser("track", help="track streamlines and write the centerline")
    _add_overrides(p)
    p.add_argument("--out", required=True, help="centerline JSON")
    p.add_argument("--streamlines", help="optional streamline JSON")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("phantom", help="write a synthetic phantom")
    p.add_argument("kind", choices=("torus", "curve"))
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--dims", type=int, nargs=3)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--ring-radius", type=float, default=40.0)
    p.add_argument("--tube-radius", type=float, default=5.0)
    p.add_argument("--amplitude", type=float, default=10.0)
    p.add_argument("--wavelength", type=float, default=80.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write-config", help="also write a matching pipeline config here")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("segment", help="run the full segmentation")
    _add_overrides(p)
    p.add_argument("--dump-graph", help="write the flow network as an edge list")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("dsc", help="Dice coefficient of two label volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_dsc)

    p = sub.add_parser("report", help="compare all mask variants with the manual FA mean")
    _add_overrides(p)
    p.add_argument("--report", help="CSV output (overrides the config)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FibercutError, OSError, ValueError) as exc:
        print(f"fibercut {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
