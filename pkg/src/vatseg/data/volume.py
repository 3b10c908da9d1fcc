"""Volume / label containers and the MVF1 binary file format.

MVF1 layout, little-endian::

    b"MVF1"
    u32 channels, u32 depth, u32 height, u32 width
    f32 spacing_x, f32 spacing_y, f32 spacing_z      (mm)
    u8  dtype code (0 = float32 image, 1 = uint8 labels)
    payload: channel-major, then row-major (depth, height, width)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

MAGIC = b"MVF1"
_HEADER = struct.Struct("<4s4I3fB")
HEADER_SIZE = _HEADER.size

CHANNELS = ("water", "fat", "fat_fraction")
LABEL_VALUES = (0, 1, 2)
DEFAULT_SPACING = (2.07, 2.07, 8.0)


def _spacing(spacing) -> Tuple[float, float, float]:
    sp = tuple(float(np.float32(s)) for s in spacing)
    if len(sp) != 3 or any(not s > 0 for s in sp):
        raise ValueError(f"spacing must be three positive values in mm, got {spacing}")
    return sp


@dataclass
class Volume:
    """Multi-channel image of shape (channels, depth, height, width) in float32."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = DEFAULT_SPACING

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"volume data must be (C, D, H, W), got shape {self.data.shape}")
        self.spacing = _spacing(self.spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def water(self) -> np.ndarray:
        return self.data[0]

    @property
    def fat(self) -> np.ndarray:
        return self.data[1]

    @property
    def fat_fraction(self) -> np.ndarray:
        return self.data[2]


@dataclass
class LabelMask:
    """Voxel labels of shape (depth, height, width): 0 background, 1 VAT, 2 SAT."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = DEFAULT_SPACING

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"label mask must be (D, H, W), got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() > 2):
            raise ValueError(f"label values must lie in {{0, 1, 2}}, found {int(data.max())}")
        self.data = data.astype(np.uint8)
        self.spacing = _spacing(self.spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.data.shape


def write_volume(path: Union[str, os.PathLike], item: Union[Volume, LabelMask]) -> None:
    if isinstance(item, Volume):
        payload = np.ascontiguousarray(item.data, dtype="<f4")
        code = 0
    elif isinstance(item, LabelMask):
        payload = np.ascontiguousarray(item.data[None], dtype=np.uint8)
        code = 1
    else:
        raise TypeError(f"cannot write {type(item).__name__}")
    c, d, h, w = payload.shape
    header = _HEADER.pack(MAGIC, c, d, h, w, *item.spacing, code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_volume(path: Union[str, os.PathLike]) -> Union[Volume, LabelMask]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise ValueError(f"{path}: truncated header, expected {HEADER_SIZE} bytes, got {len(raw)}")
    magic, c, d, h, w, sx, sy, sz, code = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if code not in (0, 1):
        raise ValueError(f"{path}: unknown dtype code {code}")
    itemsize = 4 if code == 0 else 1
    expected = HEADER_SIZE + c * d * h * w * itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {c}x{d}x{h}x{w} payload, got {len(raw)}")
    body = raw[HEADER_SIZE:]
    spacing = (sx, sy, sz)
    if code == 0:
        data = np.frombuffer(body, dtype="<f4").reshape(c, d, h, w).astype(np.float32)
        return Volume(data, spacing)
    if c != 1:
        raise ValueError(f"{path}: label file must have 1 channel, has {c}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(d, h, w)
    bad = data > 2
    if bad.any():
        raise ValueError(f"{path}: label value {int(data[bad][0])} outside {{0, 1, 2}}")
    return LabelMask(data.copy(), spacing)
