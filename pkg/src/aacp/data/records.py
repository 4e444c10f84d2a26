from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeVector, average_expert_scores


@dataclass
class PaintingRecord:
    """One painting: 8-bit ``H x W x 3`` pixels, expert annotations, provenance.

    ``provenance["kind"]`` is ``"real"`` or ``"synthetic"``; synthetic records
    also carry the render ``seed`` and ``generator`` version.
    """

    id: str
    image: np.ndarray
    annotations: list[AttributeVector] = field(default_factory=list)
    provenance: dict = field(default_factory=lambda: {"kind": "real"})

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"record {self.id}: image must be H x W x 3 uint8, got {img.dtype} {img.shape}")
        self.image = img
        kind = self.provenance.get("kind")
        if kind not in ("real", "synthetic"):
            raise ValueError(f"record {self.id}: provenance kind {kind!r} must be 'real' or 'synthetic'")
        if kind == "synthetic" and "seed" not in self.provenance:
            raise ValueError(f"record {self.id}: synthetic provenance needs a seed")

    @property
    def labeled(self) -> bool:
        return bool(self.annotations)

    @property
    def target(self) -> AttributeVector | None:
        return average_expert_scores(self.annotations) if self.annotations else None

    def pixels(self) -> np.ndarray:
        """``[3, H, W]`` floats in [0, 1]."""
        return self.image.transpose(2, 0, 1).astype(np.float64) / 255.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, PaintingRecord):
            return NotImplemented
        return (self.id == other.id and np.array_equal(self.image, other.image)
                and self.annotations == other.annotations and self.provenance == other.provenance)
