"""Tensor type and the reverse-mode gradient tape.

Each differentiable op produces a :class:`Node` that records its inputs and a
closure computing input gradients from the output gradient. ``backward`` walks
those nodes in reverse topological order exactly once; the saved activations are
released afterwards so a second pass over the same graph is rejected.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "TensorError",
    "ShapeError",
    "UsageError",
    "get_default_dtype",
    "precision",
    "no_grad",
    "is_grad_enabled",
]


class TensorError(Exception):
    """Base class for tensor engine errors."""


class ShapeError(TensorError, ValueError):
    """Operand extents do not fit the op."""


class UsageError(TensorError, RuntimeError):
    """The tape was driven incorrectly (detached loss, double backward, ...)."""


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype() -> np.dtype:
    return _get("dtype", np.dtype(np.float32))


def is_grad_enabled() -> bool:
    return _get("grad_enabled", True)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with.

    >>> with precision(np.float64):
    ...     Tensor([1.0]).dtype
    dtype('float64')
    """
    prev = get_default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """One tape record: op name, input tensors and the backward closure."""

    __slots__ = ("op", "inputs", "backward_fn", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: BackwardFn):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.op})"


class Tensor:
    """Dense row-major n-d array with optional gradient tracking.

    Leaves created with ``requires_grad=True`` accumulate ``grad`` during
    :meth:`backward`. Intermediate results only keep their gradient when
    :meth:`retain_grad` was called on them.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name", "_retain")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        dtype = np.dtype(dtype) if dtype is not None else get_default_dtype()
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name
        self._retain = False

    @classmethod
    def _wrap(cls, data: np.ndarray, node: Node | None = None) -> "Tensor":
        # internal constructor: no copy, dtype taken from data
        data = np.asarray(data)
        t = cls.__new__(cls)
        t.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
        t.grad = None
        t.node = node
        t.requires_grad = node is not None
        t.name = None
        t._retain = False
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in ``dtype`` keeping the ``requires_grad`` flag."""
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators (implemented in ops) -----------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    # -- backward ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None, order_seed: int | None = None) -> None:
        """Propagate gradients from this tensor to every leaf that requires them.

        ``grad`` defaults to 1 and is only accepted then for scalar tensors.
        ``order_seed`` selects a random valid topological order instead of the
        default one; results agree up to floating-point associativity.
        """
        if self.node is None:
            raise UsageError("backward() called on a tensor that is not on a live tape")
        if grad is None:
            if self.size != 1:
                raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self, order_seed)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t.node
            if node is None:
                _accumulate_leaf(t, g)
                continue
            if t._retain:
                _accumulate_leaf(t, g)
            if node.consumed:
                raise UsageError(f"graph through {node.op!r} was already back-propagated")
            in_grads = node.backward_fn(g)
            node.consumed = True
            node.backward_fn = _consumed
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig


def _consumed(_g):
    raise UsageError("graph was already back-propagated")


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _topological_order(root: Tensor, seed: int | None) -> list[Tensor]:
    """Tensors reachable from ``root`` ordered so consumers precede producers."""
    tensors: dict[int, Tensor] = {}
    consumers: dict[int, int] = {}
    stack = [root]
    tensors[id(root)] = root
    consumers[id(root)] = 0
    while stack:
        t = stack.pop()
        if t.node is None:
            continue
        for inp in t.node.inputs:
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key not in tensors:
                tensors[key] = inp
                consumers[key] = 0
                stack.append(inp)
            consumers[key] += 1

    rng = np.random.default_rng(seed) if seed is not None else None
    ready = [root]
    order: list[Tensor] = []
    while ready:
        if rng is not None and len(ready) > 1:
            idx = int(rng.integers(len(ready)))
            ready[idx], ready[-1] = ready[-1], ready[idx]
        t = ready.pop()
        order.append(t)
        if t.node is None:
            continue
        seen: set[int] = set()
        for inp in t.node.inputs:
            key = id(inp)
            if not inp.requires_grad:
                continue
            consumers[key] -= 1
            if consumers[key] == 0 and key not in seen:
                seen.add(key)
                ready.append(inp)
    return order


def _ops():
    from . import ops

    return ops
