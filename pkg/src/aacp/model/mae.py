"""Simplified ConvMAE-style encoder and lightweight reconstruction decoder."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import tensor as T
from ..data.masking import MaskLayout
from ..tensor import Tensor, nn
from .config import EncoderConfig

NORM_EPS = 1e-6


class DegenerateMaskError(ValueError):
    pass


def _as_layouts(masks, n: int) -> list[MaskLayout] | None:
    if masks is None:
        return None
    if isinstance(masks, MaskLayout):
        masks = [masks] * n
    masks = list(masks)
    if len(masks) != n:
        raise ValueError(f"got {len(masks)} masks for a batch of {n}")
    counts = {len(m.visible) for m in masks}
    if len(counts) != 1:
        raise ValueError("all masks in a batch need the same visible count")
    return masks


def visible_index(masks: Sequence[MaskLayout]) -> np.ndarray:
    return np.stack([m.visible for m in masks])


def restore_index(masks: Sequence[MaskLayout]) -> np.ndarray:
    """Index that reorders ``[visible..., masked...]`` back to token order."""
    order = np.stack([np.concatenate([m.visible, m.masked]) for m in masks])
    return np.argsort(order, axis=1, kind="stable")


def patchify(images: Tensor, patch: int) -> Tensor:
    """``[N, 3, S, S]`` -> ``[N, L, patch*patch*3]`` in row-major patch order."""
    n, c, s, _ = images.shape
    g = s // patch
    x = images.reshape(n, c, g, patch, g, patch).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(n, g * g, patch * patch * c)


class MaskedEncoder(nn.Module):
    """Two stride-2 conv stages, patch tokens, then transformer blocks.

    With masks, pixels of masked patches are zeroed before every conv stage
    and masked tokens skip the blocks; they come back as a shared learned
    mask token, so visible tokens never depend on masked pixel values.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        widths = (3,) + cfg.conv_widths
        self.stages = [nn.Conv2d(widths[i], widths[i + 1], 3, rng, stride=2, padding=1)
                       for i in range(len(cfg.conv_widths))]
        down = 2 ** len(cfg.conv_widths)
        self.cell = cfg.patch // down
        self.embed = nn.Linear(widths[-1] * self.cell * self.cell, cfg.embed_dim, rng)
        self.pos = nn.parameter(rng.normal(0, 0.02, (1, cfg.num_tokens, cfg.embed_dim)))
        self.mask_token = nn.parameter(rng.normal(0, 0.02, (1, 1, cfg.embed_dim)))
        self.blocks = [nn.Block(cfg.embed_dim, cfg.heads, rng, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def forward(self, images: Tensor, masks=None) -> Tensor:
        cfg = self.cfg
        n, c, s, s2 = images.shape
        if (c, s, s2) != (3, cfg.input_size, cfg.input_size):
            raise T.ShapeError(f"encoder expects [N, 3, {cfg.input_size}, {cfg.input_size}], got {images.shape}")
        layouts = _as_layouts(masks, n)

        def keep(h: Tensor) -> Tensor:
            if layouts is None:
                return h
            res = h.shape[-1]
            pm = np.stack([m.pixel_mask(res) for m in layouts])[:, None].astype(h.dtype)
            return h * pm

        h = keep(images)
        for conv in self.stages:
            h = keep(T.gelu(conv(h)))

        g, cell = cfg.grid, self.cell
        width = h.shape[1]
        tokens = h.reshape(n, width, g, cell, g, cell).transpose(0, 2, 4, 1, 3, 5)
        tokens = self.embed(tokens.reshape(n, g * g, width * cell * cell)) + self.pos

        if layouts is not None:
            tokens = T.gather(tokens, visible_index(layouts), axis=1)
        for blk in self.blocks:
            tokens = blk(tokens)
        tokens = self.norm(tokens)
        if layouts is None:
            return tokens
        n_masked = cfg.num_tokens - tokens.shape[1]
        if n_masked:
            fill = Tensor._wrap(np.zeros((n, n_masked, cfg.embed_dim), dtype=tokens.dtype)) + self.mask_token
            tokens = T.concat([tokens, fill], axis=1)
        return T.gather(tokens, restore_index(layouts), axis=1)


class Decoder(nn.Module):
    """One transformer block and a linear map to per-patch pixels."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        dim = cfg.embed_dim
        self.pos = nn.parameter(rng.normal(0, 0.02, (1, cfg.num_tokens, dim)))
        self.block = nn.Block(dim, cfg.heads, rng, cfg.mlp_ratio)
        self.norm = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, cfg.patch * cfg.patch * 3, rng)

    def forward(self, latent: Tensor) -> Tensor:
        return self.out(self.norm(self.block(latent + self.pos)))


def normalized_patches(target: Tensor, patch: int) -> tuple[Tensor, Tensor, Tensor]:
    """Per-patch standardised pixels plus the per-patch mean and std used."""
    t = patchify(target, patch)
    mu = t.mean(axis=-1, keepdims=True)
    centred = t - mu
    std = T.sqrt_floor((centred * centred).mean(axis=-1, keepdims=True) + NORM_EPS, 0.0)
    return centred / std, mu, std


def masked_patch_loss(pred: Tensor, target: Tensor, patch: int, weights: np.ndarray) -> Tensor:
    """Mean squared error of ``pred`` against normalised target patches.

    ``weights[N, L]`` is 1 on patches that count (the masked ones) and 0
    elsewhere; the target enters the graph, so its gradient can be inspected.
    """
    norm_target, _, _ = normalized_patches(target, patch)
    diff = pred - norm_target
    per_patch = (diff * diff).mean(axis=-1)
    w = weights.astype(pred.dtype)
    return (per_patch * w).sum() * (1.0 / float(w.sum()))


def patch_weights(masks: Sequence[MaskLayout] | None, n: int, num_tokens: int) -> np.ndarray:
    if masks is None:
        return np.ones((n, num_tokens))
    w = np.zeros((n, num_tokens))
    for i, m in enumerate(masks):
        w[i, m.masked] = 1.0
    return w


def masked_psnr(pred: np.ndarray, target: np.ndarray, patch: int, weights: np.ndarray) -> float:
    """PSNR (dB, peak 1) over the weighted patches, predictions de-normalised
    with each target patch's own mean and std."""
    with T.no_grad():
        _, mu, std = normalized_patches(Tensor._wrap(np.asarray(target, dtype=np.float64)), patch)
    pix = np.clip(pred * std.data + mu.data, 0.0, 1.0)
    ref = patchify(Tensor._wrap(np.asarray(target, dtype=np.float64)), patch).data
    err = ((pix - ref) ** 2).mean(axis=-1)
    mse = float((err * weights).sum() / weights.sum())
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)
