"""Masked autoencoder, perception modules and the disentangled scoring head."""

from .config import NUM_ATTRIBUTES, EncoderConfig, ModelConfig
from .head import DisentangledHead, RefreshWarning, align_basis
from .mae import DegenerateMaskError, Decoder, MaskedEncoder, masked_patch_loss, masked_psnr, patchify
from .network import PARAM_GROUPS, AACPNet, Forward, ModelStateError, images_to_tensor
from .perception import (
    ChannelPerception, SpatialModulation, SpatialPerception, channel_perceive, fuse_features,
    spatial_modulate,
)

__all__ = [
    "NUM_ATTRIBUTES", "EncoderConfig", "ModelConfig", "DisentangledHead", "RefreshWarning",
    "align_basis", "DegenerateMaskError", "Decoder", "MaskedEncoder", "masked_patch_loss",
    "masked_psnr", "patchify", "PARAM_GROUPS", "AACPNet", "Forward", "ModelStateError",
    "images_to_tensor", "ChannelPerception", "SpatialModulation", "SpatialPerception",
    "channel_perceive", "fuse_features", "spatial_modulate",
]
