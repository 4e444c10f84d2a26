"""Parameter containers and the layers the network is built from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .core import Tensor, get_default_dtype


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Base class: parameters and submodules are discovered from attributes.

    Attribute order is insertion order, so ``named_parameters`` is stable and
    doubles as the checkpoint key order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for key, p in own.items():
            arr = np.asarray(state[key])
            if arr.shape != p.shape:
                raise ValueError(f"{key}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used for 64-bit verification)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True,
                 init_scale: float = 1.0):
        bound = init_scale / math.sqrt(fan_in)
        self.weight = parameter(_uniform(rng, (fan_in, fan_out), bound))
        self.bias = parameter(np.zeros(fan_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.weight = parameter(_uniform(rng, (c_out, c_in, kernel, kernel), math.sqrt(3) * bound))
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Attention(Module):
    """Multi-head self-attention over ``[N, L, E]`` tokens."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, length, dim = x.shape
        hd = dim // self.heads
        qkv = self.qkv(x).reshape(n, length, 3, self.heads, hd).transpose(2, 0, 3, 1, 4)
        q = ops.take(qkv, [0], axis=0).reshape(n, self.heads, length, hd)
        k = ops.take(qkv, [1], axis=0).reshape(n, self.heads, length, hd)
        v = ops.take(qkv, [2], axis=0).reshape(n, self.heads, length, hd)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        attn = ops.softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(n, length, dim)
        return self.proj(out)


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(ops.gelu(self.fc1(self.norm2(x))))
