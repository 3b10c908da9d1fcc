"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import functional
from .functional import (
    RunningStats,
    batch_norm,
    concat,
    conv,
    dropout,
    log_softmax,
    max_pool,
    prelu,
    relu,
    softmax,
    transposed_conv,
)
from .tensor import Graph, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Graph",
    "RunningStats",
    "Tensor",
    "as_tensor",
    "backward",
    "batch_norm",
    "concat",
    "conv",
    "dropout",
    "functional",
    "is_grad_enabled",
    "log_softmax",
    "max_pool",
    "no_grad",
    "prelu",
    "relu",
    "softmax",
    "transposed_conv",
]
