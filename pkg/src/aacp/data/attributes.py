from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

ATTRIBUTES = (
    "brightness",
    "excitement",
    "roughness",
    "singleness",
    "chaos",
    "emptiness",
    "simplicity",
    "regularity",
)
SCORE_MAX = 10.0


class AttributeRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeVector:
    """The eight aesthetic scores of one painting, each on the 0-10 scale."""

    brightness: float
    excitement: float
    roughness: float
    singleness: float
    chaos: float
    emptiness: float
    simplicity: float
    regularity: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (0.0 <= v <= SCORE_MAX):
                raise AttributeRangeError(f"{f.name}={v!r} outside [0, {SCORE_MAX:g}]")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "AttributeVector":
        if len(values) != len(ATTRIBUTES):
            raise AttributeRangeError(f"expected {len(ATTRIBUTES)} scores, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeVector":
        if set(d) != set(ATTRIBUTES):
            raise AttributeRangeError(f"attribute keys {sorted(d)} != {sorted(ATTRIBUTES)}")
        return cls(**{k: float(d[k]) for k in ATTRIBUTES})

    def to_dict(self) -> dict[str, float]:
        return dict(zip(ATTRIBUTES, astuple(self)))

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def normalized(self) -> np.ndarray:
        return self.to_array() / SCORE_MAX


def average_expert_scores(annotations: Iterable[AttributeVector]) -> AttributeVector:
    """Per-attribute arithmetic mean over the experts' score vectors."""
    rows = [a.to_array() for a in annotations]
    if not rows:
        raise ValueError("average_expert_scores needs at least one annotation")
    # fsum is correctly rounded, so the result does not depend on expert order
    mean = [math.fsum(col) / len(rows) for col in zip(*rows)]
    return AttributeVector.from_sequence(np.clip(mean, 0.0, SCORE_MAX))
