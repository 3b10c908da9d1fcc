"""Dice, depot volumes, volume errors and the cross-validation report."""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .data.volume import LabelMask

VAT, SAT = 1, 2
DEPOTS = OrderedDict([("VAT", VAT), ("SAT", SAT)])


def _labels(mask) -> np.ndarray:
    return mask.data if isinstance(mask, LabelMask) else np.asarray(mask)


def dice(pred, ref, cls: int) -> float:
    """2|X n Y| / (|X| + |Y|) for one class; two empty sets score 1.0."""
    p, r = _labels(pred), _labels(ref)
    if p.shape != r.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {r.shape}")
    x = p == cls
    y = r == cls
    total = int(np.count_nonzero(x)) + int(np.count_nonzero(y))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(x & y)) / total


def compare_masks(a, b) -> Dict[str, float]:
    """Per-depot dice between two reference segmentations (inter-operator agreement)."""
    return {name: dice(a, b, cls) for name, cls in DEPOTS.items()}


def depot_volume(mask, spacing, cls: int) -> float:
    """Volume in mL of all voxels labelled ``cls``; spacing in mm."""
    sx, sy, sz = spacing
    return int(np.count_nonzero(_labels(mask) == cls)) * sx * sy * sz / 1000.0


def volume_errors(pred_ml: float, ref_ml: float):
    """(signed error in mL, absolute error in % of reference).

    The percentage is ``None`` (undefined) when the reference is empty but the
    prediction is not; an empty prediction of an empty depot scores 0%.
    """
    if ref_ml < 0:
        raise ValueError(f"reference volume must be >= 0, got {ref_ml}")
    signed = pred_ml - ref_ml
    if ref_ml == 0:
        return signed, (0.0 if pred_ml == 0 else None)
    return signed, abs(signed) / ref_ml * 100.0


def relative_error(pred_ml: float, ref_ml: float) -> Optional[float]:
    """predicted / reference - 1, the y-axis of the volume error scatter plot."""
    return None if ref_ml == 0 else pred_ml / ref_ml - 1.0


@dataclass
class ScanMetrics:
    scan_id: str
    center_tag: str
    dice: Dict[str, float]
    pred_ml: Dict[str, float]
    ref_ml: Dict[str, float]
    error_ml: Dict[str, float] = field(default_factory=dict)
    error_pct: Dict[str, Optional[float]] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.dice:
            if name not in self.error_ml:
                self.error_ml[name], self.error_pct[name] = volume_errors(self.pred_ml[name], self.ref_ml[name])


def scan_metrics(scan_id: str, pred, ref, spacing, center_tag: str = "") -> ScanMetrics:
    return ScanMetrics(
        scan_id=scan_id,
        center_tag=center_tag,
        dice={n: dice(pred, ref, c) for n, c in DEPOTS.items()},
        pred_ml={n: depot_volume(pred, spacing, c) for n, c in DEPOTS.items()},
        ref_ml={n: depot_volume(ref, spacing, c) for n, c in DEPOTS.items()},
    )


@dataclass
class Stat:
    mean: float
    std: float
    n: int


def _stat(values: Sequence[float]) -> Stat:
    vals = sorted(v for v in values if v is not None)
    if not vals:
        return Stat(math.nan, math.nan, 0)
    a = np.asarray(vals, dtype=np.float64)
    return Stat(float(a.mean()), float(a.std()), len(vals))


@dataclass
class AggregateReport:
    """Mean and population standard deviation per depot and metric."""

    n_scans: int
    stats: Dict[str, Dict[str, Stat]]
    by_center: Dict[str, "AggregateReport"]
    scatter: List[tuple]

    METRICS = ("dice", "error_pct", "error_ml")
    LABELS = {"dice": "Dice", "error_pct": "Error in %", "error_ml": "Error in mL"}

    def table_rows(self) -> List[tuple]:
        return [(depot, self.LABELS[m], s.mean, s.std, s.n)
                for depot, per in self.stats.items() for m, s in per.items()]

    def format_table(self) -> str:
        lines = [f"{'Depot':<6}{'Metric':<14}{'Mean':>12}{'Std':>12}{'N':>5}"]
        for depot, label, mean, std, n in self.table_rows():
            lines.append(f"{depot:<6}{label:<14}{mean:>12.4f}{std:>12.4f}{n:>5}")
        return "\n".join(lines)


def aggregate(metrics: Sequence[ScanMetrics], group: bool = True) -> AggregateReport:
    metrics = list(metrics)
    if not metrics:
        raise ValueError("cannot aggregate zero scans")
    metrics.sort(key=lambda m: (m.center_tag, m.scan_id))
    stats = {}
    for depot in DEPOTS:
        stats[depot] = {
            "dice": _stat([m.dice[depot] for m in metrics]),
            "error_pct": _stat([m.error_pct[depot] for m in metrics]),
            "error_ml": _stat([m.error_ml[depot] for m in metrics]),
        }
    by_center = {}
    if group:
        for tag in sorted({m.center_tag for m in metrics}):
            by_center[tag] = aggregate([m for m in metrics if m.center_tag == tag], group=False)
    scatter = []
    for m in metrics:
        for depot in DEPOTS:
            rel = relative_error(m.pred_ml[depot], m.ref_ml[depot])
            if rel is not None:
                scatter.append((depot, m.scan_id, m.ref_ml[depot], rel, m.center_tag))
    return AggregateReport(len(metrics), stats, by_center, scatter)


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

SCAN_COLUMNS = ["scan_id", "center_tag", "depot", "dice", "pred_ml", "ref_ml", "error_ml", "error_pct"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def scans_csv(metrics: Iterable[ScanMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS)
    for m in metrics:
        for depot in m.dice:
            w.writerow([m.scan_id, m.center_tag, depot, _fmt(m.dice[depot]), _fmt(m.pred_ml[depot]),
                        _fmt(m.ref_ml[depot]), _fmt(m.error_ml[depot]), _fmt(m.error_pct[depot])])
    return buf.getvalue()


def read_scans_csv(text: str) -> List[ScanMetrics]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(SCAN_COLUMNS) - set(rows[0]):
        raise ValueError(f"per-scan CSV lacks columns {sorted(set(SCAN_COLUMNS) - set(rows[0]))}")
    grouped: Dict[tuple, dict] = OrderedDict()
    for r in rows:
        key = (r["scan_id"], r["center_tag"])
        g = grouped.setdefault(key, {"dice": {}, "pred": {}, "ref": {}, "eml": {}, "epct": {}})
        d = r["depot"]
        g["dice"][d] = float(r["dice"])
        g["pred"][d] = float(r["pred_ml"])
        g["ref"][d] = float(r["ref_ml"])
        g["eml"][d] = float(r["error_ml"])
        g["epct"][d] = float(r["error_pct"]) if r["error_pct"] else None
    return [ScanMetrics(sid, tag, g["dice"], g["pred"], g["ref"], g["eml"], g["epct"])
            for (sid, tag), g in grouped.items()]


def aggregate_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "depot", "metric", "mean", "std", "n"])
    groups = [("all", report)] + list(report.by_center.items())
    for name, rep in groups:
        for depot, label, mean, std, n in rep.table_rows():
            w.writerow([name, depot, label, _fmt(mean), _fmt(std), n])
    return buf.getvalue()


def scatter_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depot", "scan_id", "reference_mL", "relative_signed_error", "center_tag"])
    for depot, sid, ref, rel, tag in report.scatter:
        w.writerow([depot, sid, _fmt(ref), _fmt(rel), tag])
    return buf.getvalue()
