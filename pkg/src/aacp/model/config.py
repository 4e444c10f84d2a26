from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

NUM_ATTRIBUTES = 8


@dataclass(frozen=True)
class EncoderConfig:
    """Masked-autoencoder geometry. ``input_size=256`` is the reference size;
    :meth:`desk` gives the 64-pixel configuration used for CPU runs."""

    input_size: int = 256
    patch: int = 16
    conv_widths: tuple[int, ...] = (32, 64)
    embed_dim: int = 128
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2

    def __post_init__(self):
        object.__setattr__(self, "conv_widths", tuple(int(w) for w in self.conv_widths))
        if self.input_size % self.patch:
            raise ValueError(f"input size {self.input_size} not divisible by patch {self.patch}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        down = 2 ** len(self.conv_widths)
        if self.patch % down:
            raise ValueError(f"patch {self.patch} not divisible by conv downsampling {down}")

    @classmethod
    def desk(cls, **overrides) -> "EncoderConfig":
        return cls(**{"input_size": 64, **overrides})

    @property
    def grid(self) -> int:
        return self.input_size // self.patch

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig.desk)
    spatial_widths: tuple[int, ...] = (16, 32, 48, 64)
    head_buffer: int = 512
    refresh_period: int = 0
    min_refresh_rows: int = 64
    standardize_buffer: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spatial_widths", tuple(int(w) for w in self.spatial_widths))
        down = 2 ** len(self.spatial_widths)
        if self.encoder.input_size % down:
            raise ValueError(f"input size {self.encoder.input_size} not divisible by {down}")

    @property
    def fused_dim(self) -> int:
        return self.spatial_widths[-1] + self.encoder.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["conv_widths"] = list(self.encoder.conv_widths)
        d["spatial_widths"] = list(self.spatial_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc_names = {f.name for f in fields(EncoderConfig)}
        enc = EncoderConfig(**{k: v for k, v in d["encoder"].items() if k in enc_names})
        rest = {k: v for k, v in d.items() if k != "encoder"}
        return cls(encoder=enc, **rest)
