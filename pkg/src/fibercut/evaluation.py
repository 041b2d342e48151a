"""Dice scoring and the manual-vs-automatic cost comparison."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FibercutError
from .tracking import Centerline
from .volume import LabelVolume


def dsc(a: LabelVolume, b: LabelVolume) -> float:
    """2|A & B| / (|A| + |B|); 1.0 when both are empty."""
    if a.header != b.header:
        raise FibercutError("DSC needs label volumes on the same grid")
    A = a.data.astype(bool)
    B = b.data.astype(bool)
    total = int(A.sum()) + int(B.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(A & B)) / total


def truth_within_span(truth: LabelVolume, centerline: Centerline) -> LabelVolume:
    """Restrict a ground-truth bundle to the stretch covered by ``centerline``.

    A voxel is kept when its closest point on the centerline polyline is not
    clamped to either end, i.e. it lies between the first and last normal
    planes locally.  The segmented mesh is capped at exactly those planes.
    """
    pts = centerline.points
    idx = np.argwhere(truth.data > 0)
    if len(idx) == 0:
        return truth
    xyz = truth.header.index_to_world(idx)
    a = pts[:-1]
    ab = pts[1:] - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    keep = np.zeros(len(xyz), dtype=bool)
    for start in range(0, len(xyz), 4096):
        q = xyz[start:start + 4096]
        u = np.einsum("nij,ij->ni", q[:, None, :] - a[None], ab) / L2
        foot = a[None] + np.clip(u, 0, 1)[..., None] * ab[None]
        d2 = ((q[:, None, :] - foot) ** 2).sum(-1)
        k = np.argmin(d2, axis=1)
        uk = u[np.arange(len(q)), k]
        ok = np.ones(len(q), dtype=bool)
        ok &= ~((k == 0) & (uk < 0))
        ok &= ~((k == len(ab) - 1) & (uk > 1))
        keep[start:start + len(q)] = ok
    data = np.zeros_like(truth.data)
    kept = idx[keep]
    data[kept[:, 0], kept[:, 1], kept[:, 2]] = 1
    return LabelVolume(truth.header, data)


@dataclass(frozen=True)
class DscRow:
    filter: str  # "mean", "gauss" or "manual"
    size: int | None
    fa_mean: float | None
    dsc: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.dsc is None


@dataclass(frozen=True)
class DscReport:
    rows: tuple[DscRow, ...]

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.rows)

    def sorted(self) -> "DscReport":
        return DscReport(tuple(sorted(self.rows, key=lambda r: (r.filter, r.size or 0))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "size", "fa_mean", "dsc"])
        for r in self.rows:
            w.writerow([
                r.filter,
                "" if r.size is None else r.size,
                "" if r.fa_mean is None else f"{r.fa_mean:.6f}",
                "failed" if r.dsc is None else f"{r.dsc:.6f}",
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def compare_filters(phantom, config, sizes=(1, 3, 5, 7, 9), kinds=("mean", "gauss")) -> DscReport:
    """Segment ``phantom`` once per mask variant plus once with the manual FA mean.

    ``phantom`` is a :class:`~fibercut.phantom.PhantomBundle`; ``config`` a
    :class:`~fibercut.pipeline.PipelineConfig` whose ``cost.fa_mean`` gives
    the manual value.  Rows that fail are recorded with ``dsc=None``.
    """
    from . import pipeline

    return pipeline.run_report(config, phantom.tensors, phantom.truth, sizes=sizes, kinds=kinds)
