"""Segmentation losses: pixel-wise cross-entropy and the alpha-smoothed dice loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..autograd import Tensor
from ..autograd import functional as F

BACKGROUND, VAT, SAT = 0, 1, 2
CLASS_NAMES = {BACKGROUND: "background", VAT: "VAT", SAT: "SAT"}


@dataclass(frozen=True)
class DiceLossParams:
    alpha: float = 0.1
    class_set: tuple = (VAT, SAT)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"dice loss alpha must be > 0, got {self.alpha}")
        if not self.class_set or any(c not in CLASS_NAMES for c in self.class_set):
            raise ValueError(f"invalid dice class set {self.class_set}")


def _check_target(target: np.ndarray, num_classes: int) -> np.ndarray:
    target = np.asarray(target)
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        bad = target[(target < 0) | (target >= num_classes)][0]
        raise ValueError(f"label {bad} outside {{0..{num_classes - 1}}}")
    return target


def one_hot(target: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    """(N, *spatial) integer labels -> (N, num_classes, *spatial)."""
    target = _check_target(target, num_classes)
    classes = np.arange(num_classes).reshape((1, -1) + (1,) * (target.ndim - 1))
    return (target[:, None] == classes).astype(dtype)


def cross_entropy_loss(scores: Tensor, target, class_weights: Optional[Sequence[float]] = None) -> Tensor:
    """Weighted mean over pixels of -log softmax(scores)[target]."""
    k = scores.shape[1]
    target = np.asarray(target)
    if target.shape != (scores.shape[0],) + scores.shape[2:]:
        raise ValueError(f"target shape {target.shape} does not match scores {scores.shape}")
    onehot = one_hot(target, k, scores.dtype)
    w = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"need {k} class weights, got {w.shape}")
    wmap = onehot * w.astype(scores.dtype).reshape((1, k) + (1,) * (scores.ndim - 2))
    total = float((wmap).sum())
    nll = F.sum(F.mul(F.log_softmax(scores, axis=1), wmap))
    return F.mul(nll, -1.0 / total)


def dice_loss(prob: Tensor, target, params: DiceLossParams = DiceLossParams()) -> Tensor:
    """Soft dice loss averaged over ``params.class_set``.

    Per class, overlap = sum(p_c * [y == c]), |X| = sum(p_c), |Y| = count(y == c),
    loss_c = 1 - (2 overlap + alpha) / (|X| + |Y| + alpha).
    """
    k = prob.shape[1]
    target = np.asarray(target)
    if target.shape != (prob.shape[0],) + prob.shape[2:]:
        raise ValueError(f"target shape {target.shape} does not match probabilities {prob.shape}")
    onehot = one_hot(target, k, prob.dtype)
    axes = (0,) + tuple(range(2, prob.ndim))
    inter = F.sum(F.mul(prob, onehot), axis=axes)
    size_x = F.sum(prob, axis=axes)
    size_y = Tensor(onehot.sum(axis=axes))
    a = params.alpha
    ratio = F.div(F.add(F.mul(inter, 2.0), a), F.add(F.add(size_x, size_y), a))
    idx = list(params.class_set)
    return F.sub(1.0, F.mean(F.getitem(ratio, (idx,))))


def hard_dice_loss(x_mask, y_mask, alpha: float = 0.1) -> float:
    """Set form of the dice loss on binary masks; both empty gives 0."""
    if not alpha > 0:
        raise ValueError(f"dice loss alpha must be > 0, got {alpha}")
    x = np.asarray(x_mask, dtype=bool)
    y = np.asarray(y_mask, dtype=bool)
    if x.shape != y.shape:
        raise ValueError(f"mask shapes differ: {x.shape} vs {y.shape}")
    inter = int(np.count_nonzero(x & y))
    return 1.0 - (2 * inter + alpha) / (int(np.count_nonzero(x)) + int(np.count_nonzero(y)) + alpha)
