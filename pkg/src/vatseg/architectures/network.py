"""Shared parameter bookkeeping for the two segmentation networks."""

from __future__ import annotations

from math import ceil, prod, sqrt
from typing import Dict, Optional

import numpy as np

from ..autograd import RunningStats, Tensor, as_tensor
from ..autograd import functional as F


class Network:
    """Flat table of named parameters plus the forward pass built over it.

    Layer paths (``"enc1.conv1.weight"``, ``"up3.bn.running_mean"``...) are
    generated deterministically by the builder and double as checkpoint keys.
    """

    arch: str = ""

    def __init__(self, spec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self.stats: Dict[str, RunningStats] = {}
        self._rng = rng
        self._build()
        del self._rng

    def _build(self) -> None:
        raise NotImplementedError

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None,
                trace: Optional[dict] = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, train: bool = False, rng=None, trace=None) -> Tensor:
        return self.forward(x, train=train, rng=rng, trace=trace)

    # -- parameter creation -------------------------------------------
    def _gauss(self, shape, fan_in: int) -> Tensor:
        w = self._rng.standard_normal(shape) / sqrt(fan_in)
        return Tensor(w.astype(self.dtype), requires_grad=True)

    def _zeros(self, n: int) -> Tensor:
        return Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def add_conv(self, path: str, c_in: int, c_out: int, kernel, bias: bool = True) -> None:
        kernel = tuple(kernel)
        self.params[f"{path}.weight"] = self._gauss((c_out, c_in) + kernel, c_in * prod(kernel))
        if bias:
            self.params[f"{path}.bias"] = self._zeros(c_out)

    def add_transposed_conv(self, path: str, c_in: int, c_out: int, kernel, stride,
                            bias: bool = True) -> None:
        kernel = tuple(kernel)
        overlap = prod(ceil(k / s) for k, s in zip(kernel, stride))
        self.params[f"{path}.weight"] = self._gauss((c_in, c_out) + kernel, c_in * overlap)
        if bias:
            self.params[f"{path}.bias"] = self._zeros(c_out)

    def add_batch_norm(self, path: str, channels: int) -> None:
        self.params[f"{path}.gamma"] = Tensor(np.ones(channels, dtype=self.dtype), requires_grad=True)
        self.params[f"{path}.beta"] = self._zeros(channels)
        self.stats[path] = RunningStats(channels, self.dtype)

    def add_prelu(self, path: str, channels: int, init: float = 0.25) -> None:
        self.params[f"{path}.slope"] = Tensor(np.full(channels, init, dtype=self.dtype),
                                              requires_grad=True)

    # -- layer application --------------------------------------------
    def conv(self, path: str, x: Tensor, stride=1, padding=0) -> Tensor:
        return F.conv(x, self.params[f"{path}.weight"], self.params.get(f"{path}.bias"),
                      stride=stride, padding=padding)

    def up(self, path: str, x: Tensor, stride) -> Tensor:
        return F.transposed_conv(x, self.params[f"{path}.weight"], self.params.get(f"{path}.bias"),
                                 stride=stride)

    def bn(self, path: str, x: Tensor, train: bool) -> Tensor:
        return F.batch_norm(x, self.params[f"{path}.gamma"], self.params[f"{path}.beta"],
                            self.stats[path], train, momentum=self.spec.bn_momentum,
                            eps=self.spec.bn_eps)

    def prelu(self, path: str, x: Tensor) -> Tensor:
        return F.prelu(x, self.params[f"{path}.slope"])

    # -- state ----------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: t.data for k, t in self.params.items()}
        for path, st in self.stats.items():
            state[f"{path}.running_mean"] = st.mean
            state[f"{path}.running_var"] = st.var
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)[:5]
            extra = sorted(got - expected)[:5]
            raise KeyError(f"state keys do not match network layout; missing {missing}, unexpected {extra}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(self.dtype, copy=True)
        for path, st in self.stats.items():
            st.mean[...] = state[f"{path}.running_mean"]
            st.var[...] = state[f"{path}.running_var"]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    @staticmethod
    def _input(x) -> Tensor:
        return as_tensor(x)
