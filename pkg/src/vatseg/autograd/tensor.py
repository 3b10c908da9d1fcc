"""Dense tensor with a reverse-mode differentiation graph."""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_node_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@dataclass(eq=False)
class Node:
    """One recorded operation.

    ``backward`` maps the gradient of the output to a tuple with one entry
    per input (``None`` where the input does not need a gradient).
    """

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]
    id: int = field(default_factory=lambda: next(_node_ids))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        op = f", op={self.node.op}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators (implemented in functional) ---------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str,
                backward: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op result, recording a graph node when any input needs a gradient."""
    dtypes = {t.dtype for t in inputs}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)} in one graph")
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward)
    return out


class Graph:
    """Nodes reachable from an output, in insertion (= topological) order."""

    def __init__(self, nodes: list, outputs: list):
        self.nodes = nodes
        self.outputs = outputs

    @classmethod
    def from_output(cls, out: Tensor, stop: Sequence[Tensor] = ()) -> "Graph":
        """Collect the subgraph feeding ``out``; traversal halts at ``stop`` tensors."""
        stop_ids = {id(t) for t in stop}
        seen: dict = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in stop_ids or t.node is None or t.node.id in seen:
                continue
            seen[t.node.id] = t
            stack.extend(t.node.inputs)
        order = sorted(seen)
        return cls([seen[k].node for k in order], [seen[k] for k in order])

    @property
    def ops(self) -> list:
        return [n.op for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires it with dLoss/dLeaf.

    Nodes are visited in strict reverse insertion order and input gradients
    accumulated in argument order, so repeated runs are bit-identical.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    graph = Graph.from_output(loss)
    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node, out in zip(reversed(graph.nodes), reversed(graph.outputs)):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise RuntimeError(f"{node.op}: gradient shape {gi.shape} != input shape {inp.shape}")
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
