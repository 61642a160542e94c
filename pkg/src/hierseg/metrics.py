"""Segmentation metrics (DSC, PPV, sensitivity) and cross-validation reports.

Degenerate cases are total by convention: any 0/0 metric is defined as 1.0
(both masks empty means perfect agreement), so automated sweeps over
phantoms never crash.  Aggregates use the population standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hierseg.volume import BinaryMask

METRIC_NAMES = ("dsc", "ppv", "sensitivity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_counts(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    """Exact voxel tallies of a predicted mask against ground truth."""
    if pred.extents != gt.extents:
        raise ValueError(f"extent mismatch: pred {pred.extents} vs gt {gt.extents}")
    p = pred.values.astype(bool)
    g = gt.values.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def dsc(c: ConfusionCounts) -> float:
    """Dice score 2tp / (2tp + fp + fn); empty-vs-empty is 1.0."""
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def ppv(c: ConfusionCounts) -> float:
    """Positive predictive value tp / (tp + fp); empty prediction is 1.0."""
    return _ratio(c.tp, c.tp + c.fp)


def sensitivity(c: ConfusionCounts) -> float:
    """Recall tp / (tp + fn); empty ground truth is 1.0."""
    return _ratio(c.tp, c.tp + c.fn)


@dataclass(frozen=True)
class ScanMetrics:
    scan_id: str
    dsc: float
    ppv: float
    sensitivity: float


def evaluate_pair(pred: BinaryMask, gt: BinaryMask, scan_id: str = "") -> ScanMetrics:
    counts = confusion_counts(pred, gt)
    return ScanMetrics(scan_id=scan_id, dsc=dsc(counts), ppv=ppv(counts),
                       sensitivity=sensitivity(counts))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float  # population
    max: float
    min: float


def summarize(values) -> MetricSummary:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot summarize an empty metric list")
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return MetricSummary(mean=mean, std=math.sqrt(var), max=max(values), min=min(values))


@dataclass(frozen=True)
class FoldReport:
    label: str
    per_scan: tuple[ScanMetrics, ...]
    summaries: dict

    @property
    def mean_dsc(self) -> float:
        return self.summaries["dsc"].mean


def make_report(label: str, per_scan) -> FoldReport:
    per_scan = tuple(per_scan)
    if not per_scan:
        raise ValueError(f"report {label!r}: no scan results")
    summaries = {
        name: summarize([getattr(m, name) for m in per_scan]) for name in METRIC_NAMES
    }
    return FoldReport(label=label, per_scan=per_scan, summaries=summaries)


def pooled_report(reports, label: str = "pooled") -> FoldReport:
    scans = [m for r in reports for m in r.per_scan]
    return make_report(label, scans)


def render_table(reports) -> str:
    """Plain-text table: DSC Avg +/- Std, Max, Min, then PPV and SENS, in percent."""
    header = (f"{'':<12}  {'DSC Avg':>14}  {'DSC Max':>8}  {'DSC Min':>8}"
              f"  {'PPV':>14}  {'SENS':>14}")
    lines = [header, "-" * len(header)]
    for r in reports:
        d, p, s = r.summaries["dsc"], r.summaries["ppv"], r.summaries["sensitivity"]
        lines.append(
            f"{r.label:<12}  {100 * d.mean:6.2f} ± {100 * d.std:5.2f}"
            f"  {100 * d.max:8.2f}  {100 * d.min:8.2f}"
            f"  {100 * p.mean:6.2f} ± {100 * p.std:5.2f}"
            f"  {100 * s.mean:6.2f} ± {100 * s.std:5.2f}")
    return "\n".join(lines)


def write_report_csv(report: FoldReport, path) -> None:
    """Per-scan rows then aggregate rows, with stable full-precision formatting."""
    lines = ["row,scan_id,dsc,ppv,sensitivity"]
    for m in report.per_scan:
        lines.append(f"scan,{m.scan_id},{m.dsc:.10f},{m.ppv:.10f},{m.sensitivity:.10f}")
    for stat in ("mean", "std", "max", "min"):
        vals = [getattr(report.summaries[name], stat) for name in METRIC_NAMES]
        lines.append(f"{stat},,{vals[0]:.10f},{vals[1]:.10f},{vals[2]:.10f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
