"""Patient-level k-fold splits and checkpoint selection from a validation curve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train_patients: tuple
    val_patients: tuple

    def select(self, records, validation: bool):
        """Manifest records on the validation (or training) side of this fold."""
        side = set(self.val_patients if validation else self.train_patients)
        return [r for r in records if r.patient_id in side]


def make_folds(manifest: Sequence, k: int = 10, seed: int = 0) -> List[FoldSplit]:
    """Split patients into ``k`` groups whose sizes differ by at most one.

    All scans of a patient land on the same side of every fold. The patient
    order is shuffled with ``seed``; the result is deterministic for a seed.
    """
    paths = [str(r.image_path) for r in manifest]
    if len(set(paths)) != len(paths):
        dup = next(p for p in paths if paths.count(p) > 1)
        raise ValueError(f"duplicate scan path in manifest: {dup}")
    patients = sorted({r.patient_id for r in manifest})
    if not 1 <= k <= len(patients):
        raise ValueError(f"k={k} folds need between 1 and {len(patients)} patients")
    order = np.random.default_rng(seed).permutation(len(patients))
    groups = np.array_split(np.asarray(patients, dtype=object)[order], k)
    folds = []
    for i, g in enumerate(groups):
        val = tuple(sorted(g))
        train = tuple(p for p in patients if p not in set(val))
        folds.append(FoldSplit(i, train, val))
    return folds


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    dice_vat: float
    dice_sat: float
    loss: float


def select_checkpoint(curve: Sequence[CurvePoint]) -> int:
    """Iteration with the highest mean of VAT and SAT validation dice; ties go to the earliest."""
    if not curve:
        raise ValueError("empty training curve")
    best = None
    for p in sorted(curve, key=lambda p: p.iteration):
        score = (p.dice_vat + p.dice_sat) / 2
        if best is None or score > best[0]:
            best = (score, p.iteration)
    return best[1]
