"""Input formatting: per-slice contrast adjustment, channel assembly, padding,
background masking and the fat-fraction threshold of the reference protocol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .data.volume import LabelMask, Volume

FF_THRESHOLD = 0.5


def nearest_rank(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    flat = np.sort(np.asarray(values).ravel())
    if flat.size == 0:
        raise ValueError("percentile of an empty array")
    rank = max(1, int(np.ceil(pct / 100.0 * flat.size)))
    return flat[rank - 1]


def contrast_adjust(slice_: np.ndarray, pct: float = 99.0) -> np.ndarray:
    """Clip the brightest 1% of a 2D signal slice and scale the rest to [0, 1].

    The clip level q is the nearest-rank 99th percentile over all pixels
    (zeros included); output = min(v, q) / q. Slices with q <= 0 map to zeros.
    """
    s = np.asarray(slice_, dtype=np.float32)
    if s.ndim != 2:
        raise ValueError(f"contrast_adjust works on 2D slices, got shape {s.shape}")
    q = np.float32(nearest_rank(s, pct))
    if not q > 0:
        return np.zeros_like(s)
    return np.minimum(s, q) / q


def contrast_adjust_volume(channel: np.ndarray) -> np.ndarray:
    """Apply :func:`contrast_adjust` to every transverse slice of a (D, H, W) channel."""
    return np.stack([contrast_adjust(s) for s in channel]).astype(np.float32)


def assemble_channels(water: np.ndarray, fat: np.ndarray, fat_fraction: np.ndarray,
                      spacing=(2.07, 2.07, 8.0)) -> Volume:
    arrays = {"water": water, "fat": fat, "fat_fraction": fat_fraction}
    ref = np.shape(water)
    if len(ref) != 3:
        raise ValueError(f"channels must be (depth, height, width), got water shape {ref}")
    for name, a in arrays.items():
        shape = np.shape(a)
        if len(shape) != 3:
            raise ValueError(f"{name} must be (depth, height, width), got shape {shape}")
        for axis, n, m in zip(("depth", "height", "width"), shape, ref):
            if n != m:
                raise ValueError(f"{axis} mismatch: {name} has {n}, water has {m}")
    return Volume(np.stack([np.asarray(a, dtype=np.float32) for a in arrays.values()]), spacing)


@dataclass(frozen=True)
class XYPadding:
    top: int
    left: int
    height: int
    width: int


def pad_xy_array(a: np.ndarray, target=(256, 256)) -> Tuple[np.ndarray, XYPadding]:
    """Zero-pad the last two axes to ``target`` with the original centered."""
    h, w = a.shape[-2:]
    th, tw = target
    if h > th or w > tw:
        raise ValueError(f"slice size {h}x{w} exceeds pad target {th}x{tw}")
    top, left = (th - h) // 2, (tw - w) // 2
    pad = [(0, 0)] * (a.ndim - 2) + [(top, th - h - top), (left, tw - w - left)]
    return np.pad(a, pad), XYPadding(top, left, h, w)


def crop_xy_array(a: np.ndarray, info: XYPadding) -> np.ndarray:
    return a[..., info.top:info.top + info.height, info.left:info.left + info.width]


def pad_xy(volume: Volume, target=(256, 256)) -> Tuple[Volume, XYPadding]:
    data, info = pad_xy_array(volume.data, target)
    return Volume(data, volume.spacing), info


def pad_slices_array(a: np.ndarray, target_depth: int = 24, axis: int = -3) -> Tuple[np.ndarray, int]:
    """Append copies of the last slice along ``axis`` until it holds ``target_depth``."""
    d = a.shape[axis]
    if d > target_depth:
        raise ValueError(f"depth {d} exceeds slice pad target {target_depth}")
    if d == target_depth:
        return a, 0
    last = np.take(a, [d - 1], axis=axis)
    reps = np.repeat(last, target_depth - d, axis=axis)
    return np.concatenate([a, reps], axis=axis), target_depth - d


def pad_slices(volume: Volume, target_depth: int = 24) -> Tuple[Volume, int]:
    data, added = pad_slices_array(volume.data, target_depth)
    return Volume(data, volume.spacing), added


def mask_background(volume: Volume, body_mask: np.ndarray) -> Volume:
    body = np.asarray(body_mask).astype(bool)
    if body.shape != volume.dims:
        raise ValueError(f"body mask shape {body.shape} does not match volume {volume.dims}")
    return Volume(np.where(body[None], volume.data, np.float32(0)), volume.spacing)


def ff_threshold(mask, fat_fraction) -> np.ndarray:
    """Reset VAT/SAT labels to background where the fat fraction is below 50%."""
    labels = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    ff = fat_fraction.fat_fraction if isinstance(fat_fraction, Volume) else np.asarray(fat_fraction)
    if labels.shape != ff.shape:
        raise ValueError(f"mask shape {labels.shape} does not match fat fraction {ff.shape}")
    return np.where(ff < FF_THRESHOLD, np.uint8(0), labels).astype(np.uint8)


@dataclass
class Prepared:
    """Network-ready image plus what is needed to undo the padding."""

    image: np.ndarray  # (3, D', H', W') float32
    xy: XYPadding
    added_slices: int
    depth: int


def preprocess_volume(raw: Volume, body_mask: Optional[np.ndarray] = None,
                      target_xy: Optional[Tuple[int, int]] = None, target_depth: Optional[int] = None,
                      skip_background_mask: bool = False) -> Prepared:
    """Full formatting chain for a raw (water, fat, fat_fraction) volume.

    Background masking (unless skipped) -> per-slice contrast of water and fat
    -> channel assembly with the fat fraction untouched -> xy zero padding ->
    optional slice padding for volumetric networks.
    """
    vol = raw
    if body_mask is not None and not skip_background_mask:
        vol = mask_background(vol, body_mask)
    vol = assemble_channels(contrast_adjust_volume(vol.water), contrast_adjust_volume(vol.fat),
                            vol.fat_fraction, vol.spacing)
    d, h, w = vol.dims
    data, info = pad_xy_array(vol.data, target_xy or (h, w))
    added = 0
    if target_depth is not None:
        data, added = pad_slices_array(data, target_depth)
    return Prepared(np.ascontiguousarray(data), info, added, d)


def restore_labels(pred: np.ndarray, prep: Prepared) -> np.ndarray:
    """Drop padding slices and crop xy padding from a (D', H', W') prediction."""
    return np.ascontiguousarray(crop_xy_array(pred[:prep.depth], prep.xy))
