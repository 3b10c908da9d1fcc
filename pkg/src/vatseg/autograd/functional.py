"""Differentiable operations over :class:`Tensor`.

Every op computes its forward result with numpy and records a closure that
maps the output gradient to input gradients. Convolutions use an explicit
im2col/col2im pair so 2D and 3D share one code path and per-axis strides are
handled uniformly.
"""

from __future__ import annotations

from math import prod
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), "add", back)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), "sub", back)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), "mul", back)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data / b.data

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), "div", back)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (x,), "sum", back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = prod(x.shape[a] for a in axes)
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(src),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out), (x,), "slice", back)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    nd = tensors[0].ndim
    axis = axis % nd
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != axis):
            raise ValueError(f"concat: shape {t.shape} incompatible with {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        lead = (slice(None),) * axis
        return tuple(g[lead + (slice(lo, hi),)] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", back)


def add_same(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum of two equally shaped tensors (residual / long skip)."""
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, (a, b), "add", lambda g: (g, g))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(x.data * pos, (x,), "relu", lambda g: (g * pos,))


def _channel_view(slope: np.ndarray, x: np.ndarray) -> np.ndarray:
    if slope.size == 1:
        return slope.reshape(())
    if x.ndim < 2 or x.shape[1] != slope.size:
        raise ValueError(f"prelu: {slope.size} slopes for input of shape {x.shape}")
    return slope.reshape((1, -1) + (1,) * (x.ndim - 2))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """max(0, x) + slope * min(0, x); ``slope`` is a scalar or one value per channel."""
    x = as_tensor(x)
    slope = _lift(slope, x)
    a = _channel_view(slope.data, x.data)
    neg = x.data <= 0
    out = np.where(neg, a * x.data, x.data)

    def back(g):
        gx = g * np.where(neg, a, 1).astype(x.dtype) if x.requires_grad else None
        gs = None
        if slope.requires_grad:
            contrib = g * x.data * neg
            if slope.size == 1:
                gs = np.asarray(contrib.sum(), dtype=x.dtype).reshape(slope.shape)
            else:
                axes = (0,) + tuple(range(2, x.ndim))
                gs = contrib.sum(axis=axes).reshape(slope.shape)
        return gx, gs

    return make_result(out.astype(x.dtype, copy=False), (x, slope), "prelu", back)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), "softmax", back)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), "log_softmax", back)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _per_axis(v, nsp: int, what: str) -> tuple:
    if isinstance(v, (int, np.integer)):
        v = (int(v),) * nsp
    v = tuple(int(i) for i in v)
    if len(v) != nsp:
        raise ValueError(f"{what}: expected {nsp} values, got {v}")
    return v


def _window_slices(offset, stride, out) -> tuple:
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out))


def _im2col(xp: np.ndarray, kernel, stride, out) -> np.ndarray:
    """(N, C, *padded) -> (C*prod(kernel), N*prod(out)), rows ordered (c, k...)."""
    n, c = xp.shape[:2]
    cols = np.empty((c, prod(kernel), n) + tuple(out), dtype=xp.dtype)
    for k, off in enumerate(np.ndindex(*kernel)):
        cols[:, k] = xp[(slice(None), slice(None)) + _window_slices(off, stride, out)].swapaxes(0, 1)
    return cols.reshape(c * prod(kernel), n * prod(out))


def _col2im(cols: np.ndarray, shape, kernel, stride, out) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns into an (N, C, *padded) array."""
    n, c = shape[:2]
    cols = cols.reshape((c, prod(kernel), n) + tuple(out))
    xp = np.zeros(shape, dtype=cols.dtype)
    for k, off in enumerate(np.ndindex(*kernel)):
        xp[(slice(None), slice(None)) + _window_slices(off, stride, out)] += cols[:, k].swapaxes(0, 1)
    return xp


def _to_rows(a: np.ndarray) -> np.ndarray:
    """(N, K, *sp) -> (K, N*prod(sp))."""
    return a.swapaxes(0, 1).reshape(a.shape[1], -1)


def _from_rows(rows: np.ndarray, n: int, sp) -> np.ndarray:
    """(K, N*prod(sp)) -> (N, K, *sp)."""
    return rows.reshape((rows.shape[0], n) + tuple(sp)).swapaxes(0, 1)


_AXES = ("depth", "height", "width")


def _axis_names(nsp: int) -> tuple:
    return _AXES[-nsp:]


def conv(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation with zero padding and per-axis strides (2D or 3D)."""
    if x.ndim not in (4, 5):
        raise ValueError(f"conv: input must have rank 4 or 5, got shape {x.shape}")
    nsp = x.ndim - 2
    if weight.ndim != x.ndim:
        raise ValueError(f"conv: weight rank {weight.ndim} does not match input rank {x.ndim}")
    if weight.shape[1] != x.shape[1]:
        raise ValueError(
            f"conv: channel mismatch, input has C={x.shape[1]} but weight expects C={weight.shape[1]}")
    stride = _per_axis(stride, nsp, "stride")
    padding = _per_axis(padding, nsp, "padding")
    if any(s < 1 for s in stride) or any(p < 0 for p in padding):
        raise ValueError(f"conv: invalid stride {stride} / padding {padding}")
    kernel = weight.shape[2:]
    n, k_out = x.shape[0], weight.shape[0]
    out = []
    for name, size, k, s, p in zip(_axis_names(nsp), x.shape[2:], kernel, stride, padding):
        o = (size + 2 * p - k) // s + 1
        if o < 1 or size + 2 * p < k:
            raise ValueError(f"conv: kernel {k} does not fit {name} extent {size} with padding {p}")
        out.append(o)
    out = tuple(out)

    xp = x.data
    if any(padding):
        xp = np.pad(xp, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    padded_shape = xp.shape
    cols = _im2col(xp, kernel, stride, out)
    w2 = weight.data.reshape(k_out, -1)
    y = _from_rows(w2 @ cols, n, out)
    if bias is not None:
        y = y + bias.data.reshape((1, -1) + (1,) * nsp)
    y = np.ascontiguousarray(y)

    def back(g):
        g2 = _to_rows(g)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(w2.T @ g2, padded_shape, kernel, stride, out)
            crop = tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
            gx = np.ascontiguousarray(gxp[(slice(None), slice(None)) + crop])
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, f"conv{nsp}d", back)


def transposed_conv(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1) -> Tensor:
    """Adjoint of :func:`conv` (no padding); weight is (C_in, C_out, *kernel)."""
    if x.ndim not in (4, 5):
        raise ValueError(f"transposed_conv: input must have rank 4 or 5, got shape {x.shape}")
    nsp = x.ndim - 2
    if weight.ndim != x.ndim:
        raise ValueError(f"transposed_conv: weight rank {weight.ndim} does not match input rank {x.ndim}")
    if weight.shape[0] != x.shape[1]:
        raise ValueError(
            f"transposed_conv: channel mismatch, input has C={x.shape[1]} but weight expects C={weight.shape[0]}")
    stride = _per_axis(stride, nsp, "stride")
    if any(s < 1 for s in stride):
        raise ValueError(f"transposed_conv: invalid stride {stride}")
    kernel = weight.shape[2:]
    n, c_in, c_out = x.shape[0], weight.shape[0], weight.shape[1]
    sp_in = x.shape[2:]
    out = tuple((i - 1) * s + k for i, s, k in zip(sp_in, stride, kernel))

    w2 = weight.data.reshape(c_in, -1)  # (C_in, C_out*prod(k))
    x2 = _to_rows(x.data)  # (C_in, N*L_in)
    y = _col2im(w2.T @ x2, (n, c_out) + out, kernel, stride, sp_in)
    if bias is not None:
        y += bias.data.reshape((1, -1) + (1,) * nsp)

    def back(g):
        gcols = _im2col(g, kernel, stride, sp_in)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray(_from_rows(w2 @ gcols, n, sp_in))
        if weight.requires_grad:
            gw = (x2 @ gcols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, g.ndim)))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, f"transposed_conv{nsp}d", back)


def max_pool(x: Tensor, window=2, stride=None) -> Tensor:
    """Per-window maximum; ties route the gradient to the first element in row-major order."""
    if x.ndim not in (4, 5):
        raise ValueError(f"max_pool: input must have rank 4 or 5, got shape {x.shape}")
    nsp = x.ndim - 2
    window = _per_axis(window, nsp, "window")
    stride = window if stride is None else _per_axis(stride, nsp, "stride")
    out = []
    for name, size, w, s in zip(_axis_names(nsp), x.shape[2:], window, stride):
        if w > size:
            raise ValueError(f"max_pool: window {w} larger than {name} extent {size}")
        out.append((size - w) // s + 1)
    out = tuple(out)
    lead = (slice(None), slice(None))
    views = [x.data[lead + _window_slices(off, stride, out)] for off in np.ndindex(*window)]
    stacked = np.stack(views)
    arg = stacked.argmax(axis=0)
    y = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def back(g):
        gx = np.zeros_like(x.data)
        for k, off in enumerate(np.ndindex(*window)):
            gx[lead + _window_slices(off, stride, out)] += np.where(arg == k, g, 0)
        return (gx,)

    return make_result(y, (x,), "max_pool", back)


# ---------------------------------------------------------------------------
# normalization and regularization
# ---------------------------------------------------------------------------

class RunningStats:
    """Per-channel running mean/variance owned by one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, train: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    c = x.shape[1]
    if gamma.size != c or beta.size != c or stats.mean.size != c:
        raise ValueError(f"batch_norm: parameters do not match C={c}")
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, c) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(view)
    if train:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = x.data.size // c
        unbiased = var.reshape(c) * (m / (m - 1) if m > 1 else 1.0)
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu.reshape(c)
        stats.var[...] = (1 - momentum) * stats.var + momentum * unbiased
    else:
        mu = stats.mean.reshape(view)
        var = stats.var.reshape(view)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu) * inv_std
    y = g_ * xhat + beta.data.reshape(view)

    def back(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            if train:
                m = x.data.size // c
                gx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            else:
                gx = dxhat * inv_std
        return gx, gg, gb

    return make_result(y.astype(x.dtype, copy=False), (x, gamma, beta), "batch_norm", back)


def dropout(x: Tensor, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; the mask depends only on the supplied generator state."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return make_result(x.data * keep, (x,), "dropout", lambda g: (g * keep,))
