"""Full scoring network: score = F(encoder(x))."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..data.attributes import SCORE_MAX, AttributeVector
from ..tensor import Tensor, nn
from .config import ModelConfig
from .head import DisentangledHead
from .mae import (
    DegenerateMaskError, Decoder, MaskedEncoder, _as_layouts, masked_patch_loss, patch_weights,
)
from .perception import ChannelPerception, SpatialPerception, fuse_features


class ModelStateError(RuntimeError):
    pass


PARAM_GROUPS = ("encoder", "decoder", "spatial", "channel", "head")


def images_to_tensor(images, dtype=None) -> Tensor:
    """uint8 ``[N, H, W, 3]`` (or a single ``[H, W, 3]``) to floats ``[N, 3, H, W]`` in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise T.ShapeError(f"expected [N, H, W, 3] pixels, got {arr.shape}")
    x = arr.transpose(0, 3, 1, 2)
    x = x.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else x.astype(np.float64)
    return Tensor(x, dtype=dtype)


@dataclass
class Forward:
    """Intermediate activations of one scoring pass."""

    latent: Tensor
    spatial: Tensor
    channel: Tensor
    fused: Tensor
    raw: Tensor

    @property
    def scores(self) -> Tensor:
        return T.clamp(self.raw, 0.0, 1.0)


class AACPNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None, seed: int | None = 0):
        self.config = config or ModelConfig()
        cfg = self.config
        rng = np.random.default_rng(0 if seed is None else seed)
        self.encoder = MaskedEncoder(cfg.encoder, rng)
        self.decoder = Decoder(cfg.encoder, rng)
        self.spatial = SpatialPerception(cfg.spatial_widths, cfg.encoder.embed_dim, rng)
        self.channel = ChannelPerception(rng)
        self.head = DisentangledHead(cfg.fused_dim, cfg.head_buffer, cfg.min_refresh_rows,
                                     standardize=cfg.standardize_buffer)
        self.ready = seed is not None

    def group_parameters(self, group: str) -> list[Tensor]:
        if group not in PARAM_GROUPS:
            raise KeyError(f"unknown parameter group {group!r}")
        return getattr(self, group).parameters()

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self.ready = True

    def _check_ready(self):
        if not self.ready:
            raise ModelStateError("model parameters were never initialised or loaded")

    # -- self-supervised path ----------------------------------------
    def encode(self, images: Tensor, masks=None) -> Tensor:
        self._check_ready()
        return self.encoder(images, masks)

    def mae_forward(self, images: Tensor, masks=None, target: Tensor | None = None):
        """Reconstruct patches; return ``(prediction [N, L, p*p*3], loss)``.

        ``masks=None`` reconstructs every patch through the full-token path.
        Otherwise the loss covers masked patches only and the ratio must lie
        strictly between 0 and 1.
        """
        n = images.shape[0]
        layouts = _as_layouts(masks, n)
        if layouts is not None:
            for m in layouts:
                if len(m.masked) == 0 or len(m.visible) == 0:
                    raise DegenerateMaskError(f"mask ratio {m.ratio:g} leaves nothing to reconstruct or see")
        latent = self.encode(images, layouts)
        pred = self.decoder(latent)
        weights = patch_weights(layouts, n, self.config.encoder.num_tokens)
        target = images if target is None else target
        return pred, masked_patch_loss(pred, target, self.config.encoder.patch, weights)

    # -- scoring path ------------------------------------------------
    def forward_scores(self, images: Tensor, latent: Tensor | None = None) -> Forward:
        """Run the scoring network; ``latent`` may be a cached encoder output."""
        self._check_ready()
        if latent is None:
            latent = self.encoder(images)
        spatial = self.spatial(images, latent)
        channel = self.channel(latent)
        fused = fuse_features(spatial, channel)
        return Forward(latent=latent, spatial=spatial, channel=channel, fused=fused, raw=self.head(fused))

    def predict_normalized(self, images: Tensor, latent: Tensor | None = None) -> Tensor:
        return self.forward_scores(images, latent).scores

    def predict(self, images) -> list[AttributeVector]:
        """Scores on the 0-10 scale for uint8 ``[N, H, W, 3]`` pixels."""
        with T.no_grad():
            x = images_to_tensor(images, dtype=self.encoder.pos.dtype)
            scores = self.predict_normalized(x).data.astype(np.float64)
        return [AttributeVector.from_sequence(np.clip(row * SCORE_MAX, 0.0, SCORE_MAX)) for row in scores]

    def astype(self, dtype):
        super().astype(dtype)
        self.head.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.encoder.pos.dtype

    def saliency_forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """Last spatial-perception feature map and the pre-clamp scores."""
        out = self.forward_scores(images)
        return out.spatial, out.raw

    def fused_features(self, images: Tensor, latents: Sequence | None = None) -> np.ndarray:
        with T.no_grad():
            return self.forward_scores(images, latents).fused.data.astype(np.float64)
