"""Spatial (latent-driven feature modulation) and channel (1-D conv gating) perception."""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Tensor, nn

SIGMA_EPS = 1e-5


def spatial_modulate(f: Tensor, omega_sigma: Tensor, omega_mu: Tensor, eps: float = SIGMA_EPS) -> Tensor:
    """``omega_sigma * (F - mu(F)) / sigma(F) + omega_mu`` with per-channel stats.

    ``omega_sigma`` and ``omega_mu`` are ``[N, C]``; the statistics are taken
    over H x W for every (sample, channel).
    """
    n, c = f.shape[:2]
    if omega_sigma.shape != (n, c) or omega_mu.shape != (n, c):
        raise T.ShapeError(f"modulation params {omega_sigma.shape}/{omega_mu.shape} do not match {(n, c)}")
    mu, sigma = T.channel_stats(f, eps)
    standardized = (f - mu.reshape(n, c, 1, 1)) / sigma.reshape(n, c, 1, 1)
    return omega_sigma.reshape(n, c, 1, 1) * standardized + omega_mu.reshape(n, c, 1, 1)


class SpatialModulation(nn.Module):
    """Affine maps from the token-pooled latent to per-channel scale and shift.

    Initialised to emit scale 1 and shift 0.
    """

    def __init__(self, channels: int, embed_dim: int):
        self.channels = channels
        self.sigma_w = nn.parameter(np.zeros((embed_dim, channels)))
        self.sigma_b = nn.parameter(np.ones(channels))
        self.mu_w = nn.parameter(np.zeros((embed_dim, channels)))
        self.mu_b = nn.parameter(np.zeros(channels))

    def omegas(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        return pooled @ self.sigma_w + self.sigma_b, pooled @ self.mu_w + self.mu_b

    def forward(self, f: Tensor, pooled: Tensor) -> Tensor:
        if f.shape[1] != self.channels:
            raise T.ShapeError(f"modulation configured for {self.channels} channels, got {f.shape[1]}")
        return spatial_modulate(f, *self.omegas(pooled))


class SpatialPerception(nn.Module):
    """Stride-2 conv stack on the image; every conv output is modulated by the latent."""

    def __init__(self, widths, embed_dim: int, rng: np.random.Generator):
        chans = (3,) + tuple(widths)
        self.convs = [nn.Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, padding=1)
                      for i in range(len(widths))]
        self.mods = [SpatialModulation(w, embed_dim) for w in widths]

    def forward(self, images: Tensor, latent: Tensor) -> Tensor:
        pooled = latent.mean(axis=1)
        h = images
        for conv, mod in zip(self.convs, self.mods):
            h = T.gelu(mod(conv(h), pooled))
        return h


class ChannelPerception(nn.Module):
    """Pool tokens, run a kernel-3 conv along the embedding axis, gate with a sigmoid."""

    def __init__(self, rng: np.random.Generator, kernel: int = 3, padding: int = 1):
        bound = 1.0 / math.sqrt(kernel)
        self.padding = padding
        self.weight = nn.parameter(rng.uniform(-bound, bound, (1, 1, kernel)))
        self.bias = nn.parameter(np.zeros(1))

    def forward(self, x: Tensor) -> Tensor:
        return channel_perceive(x, self.weight, self.bias, self.padding)


def channel_perceive(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """Functional form of :class:`ChannelPerception` with explicit parameters."""
    if x.ndim != 3 or x.shape[2] < weight.shape[2]:
        raise T.ShapeError(f"channel perception expects [N, L, E>={weight.shape[2]}], got {x.shape}")
    n, _, e = x.shape
    z = x.mean(axis=1).reshape(n, 1, e)
    return x * T.sigmoid(T.conv1d(z, weight, bias, padding=padding))


def fuse_features(spatial_out: Tensor, channel_out: Tensor) -> Tensor:
    """Global-average-pool both branches and concatenate: ``[N, C + E]``."""
    return T.concat([spatial_out.mean(axis=(2, 3)), channel_out.mean(axis=1)], axis=1)
