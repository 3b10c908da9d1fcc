"""Adam with bias-corrected moment estimates, updating a parameter table in place."""

from __future__ import annotations

from typing import Dict

import numpy as np

from ..autograd import Tensor


class NonFiniteGradient(FloatingPointError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient in {path}")
        self.path = path


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, Tensor]) -> None:
        """One update from the ``.grad`` of every parameter (missing grads count as zero)."""
        for path, p in params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(path)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for path, p in params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            m = self.m.get(path)
            if m is None:
                m = self.m[path] = np.zeros_like(p.data)
                self.v[path] = np.zeros_like(p.data)
            v = self.v[path]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / c1
            v_hat = v / c2
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    # -- checkpoint support ----------------------------------------------
    def state(self) -> Dict[str, np.ndarray]:
        out = {}
        for path in self.m:
            out[f"adam.m/{path}"] = self.m[path]
            out[f"adam.v/{path}"] = self.v[path]
        return out

    def load_state(self, state: Dict[str, np.ndarray], step: int) -> None:
        self.m = {k[len("adam.m/"):]: np.array(v) for k, v in state.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: np.array(v) for k, v in state.items() if k.startswith("adam.v/")}
        self.t = step


def adam_step(params: Dict[str, Tensor], state: Adam) -> None:
    state.step(params)
