"""Losses, optimizer, training loop and cross-validation plumbing."""

from .folds import CurvePoint, FoldSplit, make_folds, select_checkpoint
from .loop import (
    Scan,
    SliceSampler,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    VolumeSampler,
    curve_csv,
    load_scans,
    make_scan,
    sampler_for,
    seed_streams,
    train,
    validation_dice,
)
from .losses import BACKGROUND, SAT, VAT, DiceLossParams, cross_entropy_loss, dice_loss, hard_dice_loss, one_hot
from .optim import Adam, NonFiniteGradient, adam_step

__all__ = [
    "Adam", "BACKGROUND", "CurvePoint", "DiceLossParams", "FoldSplit", "NonFiniteGradient", "SAT", "Scan",
    "SliceSampler", "TrainConfig", "TrainResult", "TrainingDiverged", "VAT", "VolumeSampler", "adam_step",
    "cross_entropy_loss", "curve_csv", "dice_loss", "hard_dice_loss", "load_scans", "make_folds", "make_scan",
    "one_hot", "sampler_for", "seed_streams", "select_checkpoint", "train", "validation_dice",
]
