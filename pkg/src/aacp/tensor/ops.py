"""Differentiable primitives.

Every function takes tensors (or array-likes, treated as constants) and returns a
new tensor. When gradients are enabled and any input requires them, a tape node
is attached whose closure maps the output gradient to input gradients.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import Node, ShapeError, Tensor, is_grad_enabled

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "mean", "reshape",
    "transpose", "softmax", "gelu", "relu", "sigmoid", "layer_norm", "conv2d",
    "conv1d", "channel_stats", "sqrt_floor", "clamp", "concat", "gather",
    "take", "as_tensor",
]


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _constant_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=ref.dtype))


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor._wrap(data, Node(op, inputs, backward_fn))
    return Tensor._wrap(data)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _constant_like(b, a)
    if isinstance(b, Tensor):
        return _constant_like(a, b), b
    return as_tensor(a), as_tensor(b)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("div", out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), backward)


# -- reductions and shape ------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result("mean", np.asarray(out, dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    # materialised: no strided views leak out of ops
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result("transpose", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", out, tensors, backward)


def gather(x: Tensor, index, axis: int = 1) -> Tensor:
    """Select entries along ``axis`` with a per-row index array.

    ``index`` has the leading shape of ``x`` up to and including ``axis``; it
    is broadcast over the trailing axes (``take_along_axis`` semantics), so for
    tokens ``x[N, L, E]`` and ``index[N, V]`` the result is ``[N, V, E]``.
    """
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    if index.ndim != axis + 1 or index.shape[:axis] != x.shape[:axis]:
        raise ShapeError(f"gather: index shape {index.shape} does not fit {x.shape} on axis {axis}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[axis]):
        raise ShapeError(f"gather: index out of range for extent {x.shape[axis]}")
    full_index = index.reshape(index.shape + (1,) * (x.ndim - axis - 1))
    out = np.take_along_axis(x.data, full_index, axis=axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        lead = np.ix_(*[np.arange(n) for n in index.shape[:axis]], np.arange(index.shape[axis]))
        np.add.at(gx, tuple(lead[:axis]) + (index,), g)
        return (gx,)

    return _result("gather", out, (x,), backward)


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Same index subset for every row (``np.take``)."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, index, axis=axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result("take", out, (x,), backward)


# -- nonlinearities ------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _result("relu", np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1 + t)

    def backward(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1 + t) + 0.5 * xd * (1 - t * t) * dinner),)

    return _result("gelu", out.astype(xd.dtype), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _result("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def sqrt_floor(x: Tensor, eps: float) -> Tensor:
    """``max(sqrt(x), eps)``; zero gradient where the floor is active."""
    xd = x.data
    root = np.sqrt(np.maximum(xd, 0))
    active = root > eps
    out = np.where(active, root, eps).astype(xd.dtype)

    def backward(g):
        return (np.where(active, g * 0.5 / out, 0).astype(g.dtype),)

    return _result("sqrt_floor", out, (x,), backward)


# -- normalisation -------------------------------------------------------

def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    inputs = [x] + [t for t in (weight, bias) if t is not None]

    def backward(g):
        grads = []
        dxhat = g * weight.data if weight is not None else g
        if x.requires_grad:
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            grads.append(dx)
        else:
            grads.append(None)
        if weight is not None:
            grads.append(unbroadcast(g * xhat, weight.shape))
        if bias is not None:
            grads.append(unbroadcast(g, bias.shape))
        return grads

    return _result("layer_norm", out.astype(xd.dtype), inputs, backward)


def channel_stats(f: Tensor, eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Per-(sample, channel) mean and floored population std over H x W.

    Returns tensors of shape ``[N, C]``.
    """
    if f.ndim != 4:
        raise ShapeError(f"channel_stats expects [N, C, H, W], got {f.shape}")
    mu = mean(f, axis=(2, 3))
    centered = f - reshape(mu, mu.shape + (1, 1))
    var = mean(centered * centered, axis=(2, 3))
    return mu, sqrt_floor(var, eps)


# -- convolutions --------------------------------------------------------

def _conv_core(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int,
               pad_h: int, pad_w: int, op: str) -> Tensor:
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"{op}: input has {c} channels, weight expects {cw}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1")
    hp, wp = h + 2 * pad_h, w + 2 * pad_w
    if kh > hp or kw > wp:
        raise ShapeError(f"{op}: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"{op}: bias shape {bias.shape} != ({o},)")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xd = x.data
    if pad_h or pad_w:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [N, Ho, Wo, C, kh, kw] -> rows of patches
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad_h : pad_h + h, pad_w : pad_w + w]
        if bias is None:
            return gx, gw
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(op, out, inputs, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[N, C, H, W]`` with ``weight[O, C, k, k]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d expects a square kernel, got {weight.shape[2:]}")
    return _conv_core(x, weight, bias, stride, padding, padding, "conv2d")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """1-D cross-correlation of ``x[N, C, L]`` with ``weight[O, C, k]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    n, c, length = x.shape
    o, cw, k = weight.shape
    out = _conv_core(reshape(x, (n, c, 1, length)), reshape(weight, (o, cw, 1, k)), bias,
                     stride, 0, padding, "conv1d")
    return reshape(out, (n, o, out.shape[-1]))
