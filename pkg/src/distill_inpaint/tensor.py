"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation that consumes at least one gradient-requiring tensor records a
:class:`Node` stamped with a global sequence number. ``backward`` collects the
nodes reachable from the loss and replays them in strictly decreasing sequence
order, which is exactly the reverse of execution order.

Determinism: all reductions are delegated to numpy (pairwise summation) or to
BLAS matmuls, and scatter-adds use ``np.bincount`` / sequential slice adds.
With a fixed BLAS thread count the results are bit-for-bit reproducible.
"""
from __future__ import annotations

import contextlib
import itertools
import weakref
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the differentiation graph."""


_seq = itertools.count()
_grad_enabled = True
_default_dtype = np.float32


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly constructed tensors.

    Training runs in float32; gradient checks switch to float64.
    """
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = prev


def get_default_dtype():
    return _default_dtype


class Node:
    __slots__ = ("seq", "op", "inputs", "backward_fn", "out_ref", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.out_ref = None
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; shape rules are those of the functional ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op's output, recording a graph node when any input needs grad.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per input.
    """
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        node = Node(op, inputs, backward_fn)
        node.out_ref = weakref.ref(out)
        out.node = node
        out.requires_grad = True
    return out


def _collect(root: Node) -> list[Node]:
    seen: dict[int, Node] = {}
    stack = [root]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen[id(n)] = n
        for t in n.inputs:
            if t.node is not None and id(t.node) not in seen:
                stack.append(t.node)
    return sorted(seen.values(), key=lambda n: n.seq, reverse=True)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate additively across calls; the graph itself is
    consumed and a second traversal raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise GraphError("backward() on a tensor with no recorded graph")
    nodes = _collect(loss.node)
    if any(n.consumed for n in nodes):
        raise GraphError("graph already consumed by a previous backward(); rebuild it with a new forward pass")

    pending: dict[int, np.ndarray] = {id(loss.node): np.ones_like(loss.data)}
    for node in nodes:
        g = pending.pop(id(node), None)
        node.consumed = True
        if g is None:
            node.backward_fn = None
            continue
        out = node.out_ref() if node.out_ref is not None else None
        if out is not None:
            out.grad = g
        grads = node.backward_fn(g)
        node.backward_fn = None
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            if t.node is not None:
                key = id(t.node)
                pending[key] = pending[key] + gi if key in pending else gi
            else:
                gi = gi.astype(t.dtype, copy=False)
                t.grad = gi.copy() if t.grad is None else t.grad + gi
