"""Training loop, samplers and the in-memory dataset they draw from."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..architectures import Checkpoint, Network, UNetSpec
from ..autograd import backward, softmax
from ..data.manifest import ManifestRecord
from ..data.volume import read_volume
from ..evaluation import dice
from ..inference import prepare, predict_labels
from ..preprocess import Prepared, pad_slices_array, pad_xy_array, restore_labels
from .folds import CurvePoint
from .losses import SAT, VAT, DiceLossParams, cross_entropy_loss, dice_loss
from .optim import Adam

log = logging.getLogger("vatseg.train")

LOSSES = ("cross_entropy", "dice")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    iterations: int = 65000
    loss: str = "cross_entropy"
    seed: int = 0
    checkpoint_every: int = 1000
    eval_every: int = 1000
    class_weights: Optional[Tuple[float, ...]] = None
    dice: DiceLossParams = field(default_factory=DiceLossParams)

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError(f"batch_size is fixed at 1, got {self.batch_size}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("checkpoint_every", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Scan:
    """One formatted scan: network input, padded target and the original labels."""

    scan_id: str
    center_tag: str
    prep: Prepared
    target: np.ndarray  # (D', H', W') uint8, padded like prep.image
    labels: np.ndarray  # (D, H, W) uint8, original geometry
    spacing: tuple
    fat_fraction: np.ndarray  # (D, H, W) raw fat fraction, for the optional threshold


def make_scan(net: Network, scan_id: str, raw, labels: np.ndarray, body_mask=None,
              center_tag: str = "", skip_background_mask: bool = False) -> Scan:
    prep = prepare(net, raw, body_mask, skip_background_mask)
    target, _ = pad_xy_array(np.asarray(labels, dtype=np.uint8), (prep.image.shape[-2], prep.image.shape[-1]))
    if prep.added_slices:
        target, _ = pad_slices_array(target, prep.image.shape[1])
    return Scan(scan_id, center_tag, prep, np.ascontiguousarray(target), np.asarray(labels, np.uint8),
                tuple(raw.spacing), raw.fat_fraction)


def load_scans(net: Network, records: Sequence[ManifestRecord], skip_background_mask: bool = False) -> List[Scan]:
    """Read and format every manifest record (body mask used when its sibling file exists)."""
    scans = []
    for r in records:
        raw = read_volume(r.image_path)
        labels = read_volume(r.label_path)
        body = read_volume(r.body_mask_path).data.astype(bool) if r.body_mask_path.is_file() else None
        scans.append(make_scan(net, r.scan_id, raw, labels.data, body, r.center_tag, skip_background_mask))
    return scans


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

class SliceSampler:
    """Single transverse slices, every slice once per epoch in shuffled order."""

    def __init__(self, scans: Sequence[Scan], rng: np.random.Generator):
        if not scans:
            raise ValueError("empty training set")
        self.scans = list(scans)
        self.rng = rng
        self.items = [(i, z) for i, s in enumerate(self.scans) for z in range(s.prep.depth)]
        self._order: List[int] = []

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return self

    def __next__(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.items)))
        i, z = self.items[self._order.pop(0)]
        s = self.scans[i]
        return s.prep.image[None, :, z], s.target[None, z]


class VolumeSampler(SliceSampler):
    """Whole padded volumes, every scan once per epoch in shuffled order."""

    def __init__(self, scans: Sequence[Scan], rng: np.random.Generator):
        super().__init__(scans, rng)
        self.items = [(i, None) for i in range(len(self.scans))]

    def __next__(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.items)))
        s = self.scans[self.items[self._order.pop(0)][0]]
        return s.prep.image[None], s.target[None]


def sampler_for(net: Network, scans: Sequence[Scan], rng: np.random.Generator) -> SliceSampler:
    return SliceSampler(scans, rng) if isinstance(net.spec, UNetSpec) else VolumeSampler(scans, rng)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a gradient becomes non-finite; carries the last good state."""

    def __init__(self, iteration: int, reason: str, last_good: Checkpoint):
        super().__init__(f"training diverged at iteration {iteration}: {reason}")
        self.iteration = iteration
        self.last_good = last_good


@dataclass
class TrainResult:
    curve: List[CurvePoint]
    final: Checkpoint
    best: Optional[Checkpoint]
    losses: List[float]


def seed_streams(seed: int, *key: int):
    """Independent generators for (weight init, sampling order, dropout).

    ``key`` (e.g. a fold index) derives a separate family from the same seed.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, *key]).spawn(3)]


def validation_dice(net: Network, scans: Sequence[Scan]) -> Tuple[float, float]:
    """Mean per-scan VAT and SAT dice after undoing all padding."""
    vat, sat = [], []
    for s in scans:
        pred = restore_labels(predict_labels(net, s.prep.image), s.prep)
        vat.append(dice(pred, s.labels, VAT))
        sat.append(dice(pred, s.labels, SAT))
    return float(np.mean(vat)), float(np.mean(sat))


def compute_loss(net: Network, scores, target: np.ndarray, config: TrainConfig):
    if config.loss == "dice":
        return dice_loss(softmax(scores, axis=1), target, config.dice)
    return cross_entropy_loss(scores, target, config.class_weights)


def _snapshot(net: Network, opt: Adam, iteration: int, sampler, drop_rng, meta) -> Checkpoint:
    return Checkpoint.from_network(
        net,
        optimizer={k: v.copy() for k, v in opt.state().items()},
        optimizer_step=opt.t,
        iteration=iteration,
        rng_state={"sampler": sampler.rng.bit_generator.state, "dropout": drop_rng.bit_generator.state},
        meta=dict(meta),
    )


def train(net: Network, scans: Sequence[Scan], config: TrainConfig, sampler: Optional[SliceSampler] = None,
          validation: Optional[Sequence[Scan]] = None, out_dir: Optional[os.PathLike] = None,
          meta: Optional[dict] = None, key: Tuple[int, ...] = ()) -> TrainResult:
    """Adam on single samples for ``config.iterations`` steps.

    Validation dice is evaluated at iteration 0 and every ``eval_every``
    iterations (plus the final one). The best snapshot by mean foreground dice,
    earliest on ties, is kept in memory. When ``out_dir`` is given, periodic
    checkpoints ``iter_XXXXXXX.asck`` and the final ``final.asck`` are written.
    """
    _, sample_rng, drop_rng = seed_streams(config.seed, *key)
    sampler = sampler or sampler_for(net, scans, sample_rng)
    opt = Adam(lr=config.learning_rate)
    meta = meta or {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    curve: List[CurvePoint] = []
    losses: List[float] = []
    best: Optional[Checkpoint] = None
    best_score = -math.inf
    last_good = _snapshot(net, opt, 0, sampler, drop_rng, meta)
    window: List[float] = []

    def evaluate(it: int):
        nonlocal best, best_score
        if not validation:
            return
        dv, ds = validation_dice(net, validation)
        loss = float(np.mean(window)) if window else math.nan
        curve.append(CurvePoint(it, dv, ds, loss))
        log.info("event=eval iteration=%d loss=%.6f dice_vat=%.4f dice_sat=%.4f", it, loss, dv, ds)
        if (dv + ds) / 2 > best_score:
            best_score = (dv + ds) / 2
            best = _snapshot(net, opt, it, sampler, drop_rng, meta)

    evaluate(0)
    for it in range(1, config.iterations + 1):
        x, y = next(sampler)
        net.zero_grad()
        loss = compute_loss(net, net(x, train=True, rng=drop_rng), y, config)
        value = loss.item()
        if not math.isfinite(value):
            _keep(out, last_good)
            raise TrainingDiverged(it, f"loss is {value}", last_good)
        backward(loss)
        try:
            opt.step(net.params)
        except FloatingPointError as exc:
            _keep(out, last_good)
            raise TrainingDiverged(it, str(exc), last_good) from exc
        losses.append(value)
        window.append(value)
        if it % config.eval_every == 0 or it == config.iterations:
            evaluate(it)
            window = []
        if it % config.checkpoint_every == 0:
            last_good = _snapshot(net, opt, it, sampler, drop_rng, meta)
            if out is not None:
                last_good.save(out / f"iter_{it:07d}.asck")
    final = _snapshot(net, opt, config.iterations, sampler, drop_rng, meta)
    if out is not None:
        final.save(out / "final.asck")
        (out / "curve.csv").write_text(curve_csv(curve), encoding="utf-8")
    return TrainResult(curve, final, best, losses)


def _keep(out: Optional[Path], ckpt: Checkpoint) -> None:
    if out is not None:
        ckpt.save(out / "last_good.asck")


def curve_csv(curve: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "dice_vat", "dice_sat", "loss"])
    for p in curve:
        w.writerow([p.iteration, repr(p.dice_vat), repr(p.dice_sat), repr(p.loss)])
    return buf.getvalue()


def resume_optimizer(ckpt: Checkpoint, lr: float) -> Adam:
    opt = Adam(lr=lr)
    opt.load_state(ckpt.optimizer, ckpt.optimizer_step)
    return opt


def state_equal(a: Dict[str, np.ndarray], b: Dict[str, np.ndarray]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
