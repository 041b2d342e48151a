"""End-to-end segmentation driven by a JSON configuration.

Config layout (relative paths resolve against the config file)::

    {
      "paths": {"tensors": "p_tensors", "truth": "p_truth",
                "mesh": "out/mesh.obj", "labels": "out/labels",
                "summary": "out/summary.json", "graph_dump": null},
      "seeds": [{"center_mm": [40, 0, 0], "radius_mm": 2},
                {"center_mm": [0, 40, 0], "radius_mm": 2}],
      "tracking": {"fa_min": 0.2, "angle_max_deg": 45, "step_mm": null,
                   "min_len_mm": 20, "max_len_mm": 300},
      "lattice": {"planes": 50, "rays": 30, "samples": 30, "delta_mm": 0.5},
      "smoothness": {"delta_x": 2, "delta_z": 2, "force_inner": false},
      "cost": {"mode": "auto", "mask_kind": "gauss", "mask_size": 3,
               "fa_mean": null, "kind": "boundary"},
      "report": "out/report.csv"
    }
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cost as cost_mod
from .cost import LatticeParams, make_mask
from .errors import ConfigError, FibercutError
from .evaluation import DscReport, DscRow, dsc, truth_within_span
from .graphcut import SmoothnessParams, build_graph, max_flow
from .surface import extract_boundary, triangulate, voxelize, write_obj
from .tensor import tensor_fields
from .tracking import SeedRegion, TrackingParams, derive_centerline, track_streamlines
from .volume import LabelVolume, load_volume, save_volume


@dataclass(frozen=True)
class CostConfig:
    mode: str = "auto"
    fa_mean: float | None = None
    mask_kind: str | None = "gauss"
    mask_size: int | None = 3
    kind: str = "boundary"

    def __post_init__(self):
        if self.mode not in ("auto", "manual"):
            raise ConfigError(f"cost.mode must be 'auto' or 'manual', got {self.mode!r}")
        if self.mode == "manual" and self.fa_mean is None:
            raise ConfigError("manual cost mode requires cost.fa_mean")
        if self.mode == "auto":
            if self.mask_kind not in cost_mod.MASK_KINDS:
                raise ConfigError(f"cost.mask_kind must be one of {cost_mod.MASK_KINDS}")
            if self.mask_size not in cost_mod.MASK_SIZES:
                raise ConfigError(f"cost.mask_size must be one of {cost_mod.MASK_SIZES}")
        if self.fa_mean is not None and not 0 <= self.fa_mean <= 1:
            raise ConfigError("cost.fa_mean must lie in [0, 1]")
        if self.kind not in cost_mod.COST_KINDS:
            raise ConfigError(f"cost.kind must be one of {cost_mod.COST_KINDS}")


@dataclass(frozen=True)
class PipelineConfig:
    seeds: tuple[SeedRegion, SeedRegion]
    tracking: TrackingParams = TrackingParams()
    lattice: LatticeParams = LatticeParams()
    smoothness: SmoothnessParams = SmoothnessParams()
    force_inner: bool = False
    cost: CostConfig = CostConfig()
    paths: dict = field(default_factory=dict)
    report: str | None = None

    def __post_init__(self):
        try:
            self.smoothness.check(self.lattice.I)
        except FibercutError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        base = Path(base) if base is not None else Path(".")
        try:
            seeds = tuple(SeedRegion.from_json(s) for s in d["seeds"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad seeds entry: {exc}") from None
        if len(seeds) != 2:
            raise ConfigError("exactly two seed regions are required")
        lat = dict(d.get("lattice", {}))
        smooth = dict(d.get("smoothness", {}))
        try:
            lattice = LatticeParams(P=int(lat.get("planes", 50)) - 1, R=int(lat.get("rays", 30)) - 1,
                                    I=int(lat.get("samples", 30)) - 1,
                                    delta_mm=float(lat.get("delta_mm", 0.5)))
            tracking = TrackingParams(**d.get("tracking", {}))
            smoothness = SmoothnessParams(int(smooth.get("delta_x", 2)), int(smooth.get("delta_z", 2)))
        except (FibercutError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        paths = {k: (str(base / v) if isinstance(v, str) else v)
                 for k, v in d.get("paths", {}).items()}
        report = d.get("report")
        return cls(seeds=seeds, tracking=tracking, lattice=lattice, smoothness=smoothness,
                   force_inner=bool(smooth.get("force_inner", False)),
                   cost=CostConfig(**d.get("cost", {})), paths=paths,
                   report=str(base / report) if report else None)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        return cls.from_dict(data, base=p.parent)

    def to_dict(self) -> dict:
        return {
            "paths": dict(self.paths),
            "seeds": [{"center_mm": list(s.center_mm), "radius_mm": s.radius_mm} for s in self.seeds],
            "tracking": dataclasses.asdict(self.tracking),
            "lattice": {"planes": self.lattice.P + 1, "rays": self.lattice.R + 1,
                        "samples": self.lattice.I + 1, "delta_mm": self.lattice.delta_mm},
            "smoothness": {"delta_x": self.smoothness.delta_x, "delta_z": self.smoothness.delta_z,
                           "force_inner": self.force_inner},
            "cost": dataclasses.asdict(self.cost),
            "report": self.report,
        }

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


class StageError(FibercutError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


class _Timer:
    def __init__(self):
        self.times: dict[str, float] = {}

    def run(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.times[stage] = self.times.get(stage, 0.0) + time.perf_counter() - t0


@dataclass(frozen=True, eq=False)
class Prepared:
    """Mask-independent stages: FA map, streamlines and centerline."""

    fields: object
    streamlines: list
    centerline: object
    times: dict


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    fa_mean: float
    cost_field: object
    network: object
    cut: object
    mesh: object
    labels: LabelVolume
    summary: dict


def prepare(cfg: PipelineConfig, tensors) -> Prepared:
    timer = _Timer()
    fields = timer.run("fa", tensor_fields, tensors)
    streamlines = timer.run("track", track_streamlines, fields.fa, tensors, cfg.seeds[0],
                            cfg.seeds[1], cfg.tracking, fields=fields)
    centerline = timer.run("centerline", derive_centerline, streamlines, cfg.lattice.P)
    return Prepared(fields, streamlines, centerline, dict(timer.times))


def resolve_fa_mean(cfg: PipelineConfig, prep: Prepared) -> float:
    if cfg.cost.mode == "manual":
        return float(cfg.cost.fa_mean)
    mask = make_mask(cfg.cost.mask_kind, cfg.cost.mask_size)
    return cost_mod.estimate_mean_fa(prep.fields.fa, prep.centerline, mask)


def segment_prepared(cfg: PipelineConfig, prep: Prepared) -> SegmentationResult:
    timer = _Timer()
    t_start = time.perf_counter()
    fa_mean = timer.run("fa_mean", resolve_fa_mean, cfg, prep)
    cf = timer.run("lattice", cost_mod.sample_lattice, prep.fields.fa, prep.centerline,
                   cfg.lattice, fa_mean, kind=cfg.cost.kind)
    net = timer.run("graph", build_graph, cf, cfg.smoothness, force_inner=cfg.force_inner)
    cut = timer.run("cut", max_flow, net)
    if cut.flow_value != np.inf and not np.isclose(cut.flow_value, cut.cut_value,
                                                   rtol=1e-9, atol=1e-12):
        raise StageError("cut", FibercutError(
            f"flow {cut.flow_value} differs from cut capacity {cut.cut_value}"))
    cloud = timer.run("boundary", extract_boundary, cut, cf)
    mesh = timer.run("mesh", triangulate, cloud, prep.centerline)
    labels = timer.run("voxelize", voxelize, mesh, prep.fields.fa.header.with_kind(1, "u8"))
    seg_time = time.perf_counter() - t_start
    times = dict(prep.times)
    times.update(timer.times)
    summary = {
        "fa_mean": fa_mean,
        "cost_mode": cfg.cost.mode,
        "mask_kind": cfg.cost.mask_kind if cfg.cost.mode == "auto" else None,
        "mask_size": cfg.cost.mask_size if cfg.cost.mode == "auto" else None,
        "cost_kind": cfg.cost.kind,
        "n_streamlines": len(prep.streamlines),
        "node_count": net.n_nodes,
        "arc_count": net.n_arcs,
        "flow_value": cut.flow_value,
        "cut_value": cut.cut_value,
        "labelled_voxels": labels.count,
        "segmentation_seconds": seg_time,
        "stage_seconds": times,
    }
    return SegmentationResult(fa_mean, cf, net, cut, mesh, labels, summary)


def score(result: SegmentationResult, truth: LabelVolume, centerline) -> float:
    return dsc(result.labels, truth_within_span(truth, centerline))


def run_segment(cfg: PipelineConfig, write: bool = True) -> SegmentationResult:
    """Full chain from the config's tensor file; writes mesh, labels and summary."""
    try:
        tensors = load_volume(cfg.paths["tensors"])
    except KeyError:
        raise ConfigError("paths.tensors is required") from None
    except Exception as exc:
        raise StageError("load", exc) from exc
    t0 = time.perf_counter()
    prep = prepare(cfg, tensors)
    result = segment_prepared(cfg, prep)
    result.summary["wall_seconds"] = time.perf_counter() - t0
    if cfg.paths.get("truth"):
        truth = load_volume(cfg.paths["truth"])
        result.summary["dsc"] = score(result, truth, prep.centerline)
    if write:
        out = {k: cfg.paths.get(k) for k in ("mesh", "labels", "summary", "graph_dump")}
        for target in out.values():
            if target:
                Path(target).parent.mkdir(parents=True, exist_ok=True)
        if out["mesh"]:
            write_obj(result.mesh, out["mesh"])
        if out["labels"]:
            save_volume(result.labels, out["labels"])
        if out["graph_dump"]:
            result.network.dump(out["graph_dump"])
        if out["summary"]:
            Path(out["summary"]).write_text(json.dumps(result.summary, indent=2) + "\n")
    return result


def report_configs(cfg: PipelineConfig, sizes=(1, 3, 5, 7, 9), kinds=("mean", "gauss")):
    """(row label, config) for every automatic variant plus the manual run."""
    out = []
    for kind in kinds:
        for size in sizes:
            c = cfg.replace(cost=dataclasses.replace(cfg.cost, mode="auto", mask_kind=kind,
                                                     mask_size=size))
            out.append(((kind, size), c))
    if cfg.cost.fa_mean is not None:
        c = cfg.replace(cost=dataclasses.replace(cfg.cost, mode="manual"))
        out.append((("manual", None), c))
    return out


def run_report(cfg: PipelineConfig, tensors, truth: LabelVolume, sizes=(1, 3, 5, 7, 9),
               kinds=("mean", "gauss")) -> DscReport:
    prep = prepare(cfg, tensors)
    clipped = truth_within_span(truth, prep.centerline)
    rows = []
    for (kind, size), c in report_configs(cfg, sizes, kinds):
        try:
            res = segment_prepared(c, prep)
            rows.append(DscRow(kind, size, res.fa_mean, dsc(res.labels, clipped)))
        except FibercutError as exc:
            fa_mean = c.cost.fa_mean if c.cost.mode == "manual" else None
            rows.append(DscRow(kind, size, fa_mean, None, str(exc)))
    return DscReport(tuple(rows)).sorted()
