"""2D U-Net with internal zero padding, so every level keeps its entry resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor
from ..autograd import functional as F
from .network import Network


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int = 3
    num_classes: int = 3
    depth: int = 4
    base_channels: int = 64
    use_bias: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError(f"invalid U-Net spec: depth={self.depth}, base_channels={self.base_channels}")

    def channels(self, level: int) -> int:
        """Feature maps at encoder level 1..depth; level depth+1 is the bottleneck."""
        return self.base_channels * 2 ** (level - 1)


class UNet(Network):
    arch = "unet"

    def _build(self) -> None:
        s = self.spec
        c_prev = s.in_channels
        for lvl in range(1, s.depth + 1):
            c = s.channels(lvl)
            self._double_conv(f"enc{lvl}", c_prev, c)
            c_prev = c
        self._double_conv("bottleneck", c_prev, s.channels(s.depth + 1))
        for lvl in range(s.depth, 0, -1):
            c = s.channels(lvl)
            self.add_transposed_conv(f"up{lvl}", 2 * c, c, (2, 2), (2, 2), bias=s.use_bias)
            self._double_conv(f"dec{lvl}", 2 * c, c)
        self.add_conv("head", s.channels(1), s.num_classes, (1, 1), bias=s.use_bias)

    def _double_conv(self, path: str, c_in: int, c_out: int) -> None:
        self.add_conv(f"{path}.conv1", c_in, c_out, (3, 3), bias=self.spec.use_bias)
        self.add_conv(f"{path}.conv2", c_out, c_out, (3, 3), bias=self.spec.use_bias)

    def _block(self, path: str, x: Tensor) -> Tensor:
        x = F.relu(self.conv(f"{path}.conv1", x, padding=1))
        return F.relu(self.conv(f"{path}.conv2", x, padding=1))

    def check_input(self, shape) -> None:
        s = self.spec
        if len(shape) != 4:
            raise ValueError(f"U-Net expects [N, C, H, W] input, got shape {tuple(shape)}")
        if shape[1] != s.in_channels:
            raise ValueError(f"U-Net expects {s.in_channels} input channels, got {shape[1]}")
        m = 2 ** s.depth
        for name, n in zip(("height", "width"), shape[2:]):
            if n % m:
                raise ValueError(f"U-Net input {name} {n} is not divisible by {m}")

    def forward(self, x, train: bool = False, rng=None, trace=None) -> Tensor:
        x = self._input(x)
        self.check_input(x.shape)
        skips = []
        h = x
        for lvl in range(1, self.spec.depth + 1):
            h = self._block(f"enc{lvl}", h)
            skips.append(h)
            if trace is not None:
                trace[f"enc{lvl}"] = h
            h = F.max_pool(h, 2)
        h = self._block("bottleneck", h)
        if trace is not None:
            trace["bottleneck"] = h
        for lvl in range(self.spec.depth, 0, -1):
            h = self.up(f"up{lvl}", h, stride=(2, 2))
            h = F.concat([skips[lvl - 1], h], axis=1)
            h = self._block(f"dec{lvl}", h)
            if trace is not None:
                trace[f"dec{lvl}"] = h
        return self.conv("head", h)


def build_unet(spec: UNetSpec, rng: np.random.Generator, dtype=np.float32) -> UNet:
    return UNet(spec, rng, dtype)
