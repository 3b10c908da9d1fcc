"""End-to-end jobs behind the command line: train, cross-validate, predict, evaluate."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .architectures import Checkpoint, Network, UNetSpec, VNetSpec, build_network
from .config import RunConfig
from .data.manifest import ManifestRecord, body_mask_path, load_manifest
from .data.volume import LabelMask, read_volume, write_volume
from .evaluation import AggregateReport, ScanMetrics, aggregate, aggregate_csv, scan_metrics, scans_csv, scatter_csv
from .inference import predict_labels, predict_volume
from .preprocess import ff_threshold, restore_labels
from .training import (
    CurvePoint,
    DiceLossParams,
    Scan,
    TrainConfig,
    curve_csv,
    load_scans,
    make_folds,
    seed_streams,
    select_checkpoint,
    train,
)

log = logging.getLogger("vatseg")


class FoldFailed(RuntimeError):
    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold


def network_spec(cfg: RunConfig):
    if cfg.arch == "unet":
        return UNetSpec(base_channels=cfg.base_channels)
    return VNetSpec(base_channels=cfg.base_channels)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        iterations=cfg.iterations,
        loss=cfg.loss,
        seed=cfg.seed,
        checkpoint_every=cfg.checkpoint_every,
        eval_every=cfg.eval_every,
        dice=DiceLossParams(alpha=cfg.alpha),
    )


def _fresh_network(cfg: RunConfig, *key: int) -> Network:
    init_rng = seed_streams(cfg.seed, *key)[0]
    return build_network(network_spec(cfg), init_rng)


def _prepare_output(cfg: RunConfig) -> Path:
    cfg.require("manifest", "output")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved.txt")
    return out


def evaluate_scans(net: Network, scans: Sequence[Scan], apply_ff_threshold: bool = False) -> List[ScanMetrics]:
    """Predict every scan, undo padding, optionally threshold, and score against its labels."""
    out = []
    for s in scans:
        pred = restore_labels(predict_labels(net, s.prep.image), s.prep)
        if apply_ff_threshold:
            pred = ff_threshold(pred, s.fat_fraction)
        out.append(scan_metrics(s.scan_id, pred, s.labels, s.spacing, s.center_tag))
    return out


def write_report(out: Path, metrics: Sequence[ScanMetrics]) -> AggregateReport:
    report = aggregate(metrics)
    (out / "scans.csv").write_text(scans_csv(metrics), encoding="utf-8")
    (out / "aggregate.csv").write_text(aggregate_csv(report), encoding="utf-8")
    (out / "scatter.csv").write_text(scatter_csv(report), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def run_train(cfg: RunConfig) -> Checkpoint:
    """Train one network on every scan of the manifest; the curve tracks training-set dice."""
    out = _prepare_output(cfg)
    records = load_manifest(cfg.manifest)
    if not records:
        raise ValueError(f"manifest {cfg.manifest} lists no scans")
    net = _fresh_network(cfg)
    scans = load_scans(net, records)
    log.info("event=train_start arch=%s scans=%d iterations=%d", cfg.arch, len(scans), cfg.iterations)
    result = train(net, scans, train_config(cfg), validation=scans, out_dir=out, meta={"job": "train"})
    log.info("event=train_done iteration=%d", result.final.iteration)
    return result.final


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    curve: List[CurvePoint]
    selected_iteration: int
    metrics: List[ScanMetrics]


@dataclass
class CVOutcome:
    folds: List[FoldOutcome]
    metrics: List[ScanMetrics]
    report: AggregateReport


def _fold_table(records: Sequence[ManifestRecord], folds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "patient_id"])
    for f in folds:
        for p in f.val_patients:
            w.writerow([f.fold, p])
    return buf.getvalue()


def run_cv(cfg: RunConfig) -> CVOutcome:
    """Patient-level k-fold cross-validation with per-fold checkpoint selection."""
    out = _prepare_output(cfg)
    records = load_manifest(cfg.manifest)
    folds = make_folds(records, k=cfg.folds, seed=cfg.seed)
    (out / "folds.csv").write_text(_fold_table(records, folds), encoding="utf-8")
    template = build_network(network_spec(cfg))
    scans = {s.scan_id: s for s in load_scans(template, records)}
    tcfg = train_config(cfg)
    outcomes: List[FoldOutcome] = []
    for f in folds:
        fold_dir = out / f"fold_{f.fold}"
        fold_dir.mkdir(exist_ok=True)
        try:
            tr = [scans[r.scan_id] for r in f.select(records, validation=False)]
            va = [scans[r.scan_id] for r in f.select(records, validation=True)]
            log.info("event=fold_start fold=%d train_scans=%d val_scans=%d", f.fold, len(tr), len(va))
            net = _fresh_network(cfg, f.fold)
            res = train(net, tr, tcfg, validation=va, meta={"job": "cv", "fold": f.fold}, key=(f.fold,))
            chosen = select_checkpoint(res.curve)
            assert res.best is not None and res.best.iteration == chosen
            res.final.save(fold_dir / "final.asck")
            res.best.save(fold_dir / "selected.asck")
            (fold_dir / "curve.csv").write_text(curve_csv(res.curve), encoding="utf-8")
            metrics = evaluate_scans(res.best.to_network(), va, cfg.ff_threshold_enabled)
            write_report(fold_dir, metrics)
        except Exception as exc:
            log.error("event=fold_failed fold=%d error=%s", f.fold, exc)
            raise FoldFailed(f.fold, exc) from exc
        log.info("event=fold_done fold=%d selected_iteration=%d", f.fold, chosen)
        outcomes.append(FoldOutcome(f.fold, res.curve, chosen, metrics))
    union = [m for o in outcomes for m in o.metrics]
    report = write_report(out, union)
    (out / "report.txt").write_text(report.format_table() + "\n", encoding="utf-8")
    return CVOutcome(outcomes, union, report)


# ---------------------------------------------------------------------------
# predict / evaluate
# ---------------------------------------------------------------------------

def prediction_path(out_dir: Path, image_path: os.PathLike) -> Path:
    return Path(out_dir) / (Path(image_path).name.removesuffix(".mvf") + ".pred.mvf")


def predict_files(net: Network, paths: Sequence[os.PathLike], out_dir: os.PathLike,
                  skip_background_mask: bool = False, apply_ff_threshold: bool = False) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volumes = []
    for p in paths:
        raw = read_volume(p)
        if isinstance(raw, LabelMask):
            raise ValueError(f"{p}: is a label file, expected a 3-channel image")
        if raw.data.shape[0] != net.spec.in_channels:
            raise ValueError(f"{p}: has {raw.data.shape[0]} channels, checkpoint expects {net.spec.in_channels}")
        if isinstance(net.spec, VNetSpec) and raw.dims[0] > net.spec.depth:
            raise ValueError(f"{p}: {raw.dims[0]} slices exceed the V-Net input depth {net.spec.depth}")
        volumes.append(raw)
    written = []
    for p, raw in zip(paths, volumes):
        bm = body_mask_path(p)
        body = read_volume(bm).data.astype(bool) if bm.is_file() else None
        mask = predict_volume(net, raw, body, skip_background_mask, apply_ff_threshold)
        target = prediction_path(out_dir, p)
        write_volume(target, mask)
        log.info("event=predicted input=%s output=%s", p, target)
        written.append(target)
    return written


def evaluate_predictions(records: Sequence[ManifestRecord], pred_dir: os.PathLike) -> List[ScanMetrics]:
    out = []
    for r in records:
        ref = read_volume(r.label_path)
        pred_file = prediction_path(Path(pred_dir), r.image_path)
        if not pred_file.is_file():
            raise FileNotFoundError(f"no prediction for {r.scan_id}: expected {pred_file}")
        pred = read_volume(pred_file)
        out.append(scan_metrics(r.scan_id, pred, ref, ref.spacing, r.center_tag))
    return out


def evaluate_checkpoint(ckpt: Checkpoint, records: Sequence[ManifestRecord], skip_background_mask: bool = False,
                        apply_ff_threshold: bool = False) -> List[ScanMetrics]:
    net = ckpt.to_network()
    return evaluate_scans(net, load_scans(net, records, skip_background_mask), apply_ff_threshold)


def report_deltas(report: AggregateReport, baseline: AggregateReport) -> str:
    """Per depot and metric: mean, baseline mean and their difference."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depot", "metric", "mean", "baseline_mean", "delta"])
    base = {(d, m): mean for d, m, mean, _, _ in baseline.table_rows()}
    for depot, metric, mean, _, _ in report.table_rows():
        b = base.get((depot, metric), np.nan)
        w.writerow([depot, metric, repr(mean), repr(b), repr(mean - b)])
    return buf.getvalue()
