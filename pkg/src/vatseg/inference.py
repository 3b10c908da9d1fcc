"""Run a trained network on formatted images and map predictions back to scan geometry."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .architectures import Network, UNetSpec, VNetSpec
from .autograd import no_grad
from .data.volume import LabelMask, Volume
from .preprocess import Prepared, ff_threshold, preprocess_volume, restore_labels

SLICE_CHUNK = 16


def predict_scores(net: Network, image: np.ndarray) -> np.ndarray:
    """Class scores (3, D', H', W') for a formatted (3, D', H', W') image, eval mode."""
    with no_grad():
        if isinstance(net.spec, UNetSpec):
            slices = np.ascontiguousarray(image.transpose(1, 0, 2, 3))
            out = [net(slices[i:i + SLICE_CHUNK]).data for i in range(0, len(slices), SLICE_CHUNK)]
            return np.concatenate(out).transpose(1, 0, 2, 3)
        return net(image[None]).data[0]


def predict_labels(net: Network, image: np.ndarray) -> np.ndarray:
    """Arg-max labels (D', H', W') over the class axis."""
    return predict_scores(net, image).argmax(axis=0).astype(np.uint8)


def geometry_for(net: Network, dims) -> dict:
    """Padding targets a network needs for a scan of the given (D, H, W)."""
    d, h, w = dims
    spec = net.spec
    if isinstance(spec, VNetSpec):
        my, mx = spec.total_stride[1:]
        if d > spec.depth:
            raise ValueError(f"scan has {d} slices, more than the V-Net input depth {spec.depth}")
        return {"target_xy": (-(-h // my) * my, -(-w // mx) * mx), "target_depth": spec.depth}
    m = 2 ** spec.depth
    return {"target_xy": (-(-h // m) * m, -(-w // m) * m), "target_depth": None}


def prepare(net: Network, raw: Volume, body_mask: Optional[np.ndarray] = None,
            skip_background_mask: bool = False, target_xy=None) -> Prepared:
    geo = geometry_for(net, raw.dims)
    if target_xy is not None:
        geo["target_xy"] = tuple(target_xy)
    return preprocess_volume(raw, body_mask, skip_background_mask=skip_background_mask, **geo)


def predict_volume(net: Network, raw: Volume, body_mask: Optional[np.ndarray] = None,
                   skip_background_mask: bool = False, apply_ff_threshold: bool = False,
                   target_xy=None) -> LabelMask:
    """Format -> forward -> argmax -> undo padding -> optional fat-fraction threshold."""
    prep = prepare(net, raw, body_mask, skip_background_mask, target_xy)
    labels = restore_labels(predict_labels(net, prep.image), prep)
    if apply_ff_threshold:
        labels = ff_threshold(labels, raw.fat_fraction)
    return LabelMask(labels, raw.spacing)
