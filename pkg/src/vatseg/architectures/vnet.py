"""3D V-Net adapted to thick-slice, three-channel water-fat volumes.

Differences from the textbook network:

* inputs carry 24 slices and two of the four down-transitions keep the slice
  count (stride 1 along z), so the encoder depth runs 24, 24, 12, 12, 6;
* the first block has no residual add, since its 3 input channels cannot be
  summed with its feature maps;
* the decoder uses fewer convolutions per level than the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from ..autograd import Tensor
from ..autograd import functional as F
from .network import Network


@dataclass(frozen=True)
class VNetSpec:
    in_channels: int = 3
    num_classes: int = 3
    levels: int = 5
    base_channels: int = 16
    depth: int = 24
    kernel_size: int = 5
    z_stride_schedule: tuple = ((1, 2, 2), (2, 2, 2), (1, 2, 2), (2, 2, 2))
    encoder_convs: tuple = (1, 2, 3, 3, 3)
    decoder_convs_per_level: int = 1
    first_block_short_skip: bool = False
    dropout_p: float = 0.5
    dropout_levels: tuple = (3, 4, 5)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "z_stride_schedule", tuple(tuple(s) for s in self.z_stride_schedule))
        object.__setattr__(self, "encoder_convs", tuple(self.encoder_convs))
        object.__setattr__(self, "dropout_levels", tuple(self.dropout_levels))
        if len(self.z_stride_schedule) != self.levels - 1:
            raise ValueError("z_stride_schedule needs one stride triple per down-transition")
        if len(self.encoder_convs) != self.levels:
            raise ValueError("encoder_convs needs one entry per level")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd to keep feature map sizes")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.first_block_short_skip and self.base_channels % self.in_channels:
            raise ValueError(
                f"first-block short skip needs base_channels ({self.base_channels}) to be a multiple "
                f"of in_channels ({self.in_channels})")
        if self.depth % self.total_stride[0]:
            raise ValueError(f"depth {self.depth} not divisible by total z stride {self.total_stride[0]}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    @property
    def total_stride(self) -> tuple:
        return tuple(prod(s[i] for s in self.z_stride_schedule) for i in range(3))

    def depth_trace(self) -> list:
        """Slice count at each encoder level, e.g. [24, 24, 12, 12, 6]."""
        d = [self.depth]
        for s in self.z_stride_schedule:
            d.append(d[-1] // s[0])
        return d


class VNet(Network):
    arch = "vnet"

    def _build(self) -> None:
        s = self.spec
        k = (s.kernel_size,) * 3
        self._conv_stack("enc1", s.in_channels, s.channels(1), s.encoder_convs[0], k)
        for lvl in range(2, s.levels + 1):
            c_in, c = s.channels(lvl - 1), s.channels(lvl)
            stride = s.z_stride_schedule[lvl - 2]
            self.add_conv(f"down{lvl}.conv", c_in, c, stride)
            self.add_batch_norm(f"down{lvl}.bn", c)
            self.add_prelu(f"down{lvl}.act", c)
            self._conv_stack(f"enc{lvl}", c, c, s.encoder_convs[lvl - 1], k)
        for lvl in range(s.levels - 1, 0, -1):
            c_in, c = s.channels(lvl + 1), s.channels(lvl)
            stride = s.z_stride_schedule[lvl - 1]
            self.add_transposed_conv(f"up{lvl}.conv", c_in, c, stride, stride)
            self.add_batch_norm(f"up{lvl}.bn", c)
            self.add_prelu(f"up{lvl}.act", c)
            self._conv_stack(f"dec{lvl}", c, c, s.decoder_convs_per_level, k)
        self.add_conv("head", s.channels(1), s.num_classes, (1, 1, 1))

    def _conv_stack(self, path: str, c_in: int, c_out: int, n: int, kernel) -> None:
        for i in range(1, n + 1):
            self.add_conv(f"{path}.conv{i}", c_in if i == 1 else c_out, c_out, kernel)
            self.add_batch_norm(f"{path}.bn{i}", c_out)
            self.add_prelu(f"{path}.act{i}", c_out)

    def _stack(self, path: str, x: Tensor, n: int, train: bool) -> Tensor:
        pad = self.spec.kernel_size // 2
        for i in range(1, n + 1):
            x = self.conv(f"{path}.conv{i}", x, padding=pad)
            x = self.prelu(f"{path}.act{i}", self.bn(f"{path}.bn{i}", x, train))
        return x

    def _transition(self, path: str, x: Tensor, stride, train: bool, upward: bool) -> Tensor:
        x = self.up(f"{path}.conv", x, stride) if upward else self.conv(f"{path}.conv", x, stride=stride)
        return self.prelu(f"{path}.act", self.bn(f"{path}.bn", x, train))

    def _residual(self, path: str, x: Tensor, n: int, train: bool, trace) -> Tensor:
        stack = self._stack(path, x, n, train)
        out = F.add_same(stack, x)
        if trace is not None:
            trace[f"{path}.input"] = x
            trace[f"{path}.stack"] = stack
        return out

    def check_input(self, shape) -> None:
        s = self.spec
        if len(shape) != 5:
            raise ValueError(f"V-Net expects [N, C, D, H, W] input, got shape {tuple(shape)}")
        if shape[1] != s.in_channels:
            raise ValueError(f"V-Net expects {s.in_channels} input channels, got {shape[1]}")
        if shape[2] != s.depth:
            raise ValueError(f"V-Net expects depth {s.depth} (pad slices first), got {shape[2]}")
        for name, n, m in zip(("height", "width"), shape[3:], s.total_stride[1:]):
            if n % m:
                raise ValueError(f"V-Net input {name} {n} is not divisible by {m}")

    def forward(self, x, train: bool = False, rng=None, trace=None) -> Tensor:
        s = self.spec
        x = self._input(x)
        self.check_input(x.shape)
        h = self._stack("enc1", x, s.encoder_convs[0], train)
        if s.first_block_short_skip:
            reps = s.channels(1) // s.in_channels
            h = F.add_same(h, F.concat([x] * reps, axis=1))
        if trace is not None:
            trace["enc1"] = h
        skips = [h]
        for lvl in range(2, s.levels + 1):
            h = self._transition(f"down{lvl}", h, s.z_stride_schedule[lvl - 2], train, upward=False)
            if lvl in s.dropout_levels:
                h = F.dropout(h, s.dropout_p, train, rng)
            h = self._residual(f"enc{lvl}", h, s.encoder_convs[lvl - 1], train, trace)
            if trace is not None:
                trace[f"enc{lvl}"] = h
            skips.append(h)
        for lvl in range(s.levels - 1, 0, -1):
            h = self._transition(f"up{lvl}", h, s.z_stride_schedule[lvl - 1], train, upward=True)
            h = F.add_same(h, skips[lvl - 1])
            h = self._residual(f"dec{lvl}", h, s.decoder_convs_per_level, train, trace)
            if trace is not None:
                trace[f"dec{lvl}"] = h
        return self.conv("head", h)


def build_vnet(spec: VNetSpec, rng: np.random.Generator, dtype=np.float32) -> VNet:
    return VNet(spec, rng, dtype)
