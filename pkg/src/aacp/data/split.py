from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .records import PaintingRecord

logger = logging.getLogger(__name__)


@dataclass
class SplitManifest:
    subsets: dict[str, list[str]]
    seed: int
    bins: int = 1
    fractions: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, name: str) -> list[str]:
        return self.subsets[name]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "bins": self.bins, "fractions": dict(self.fractions),
                "subsets": {k: list(v) for k, v in self.subsets.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitManifest":
        return cls(subsets={k: list(v) for k, v in d["subsets"].items()}, seed=int(d["seed"]),
                   bins=int(d.get("bins", 1)), fractions=dict(d.get("fractions", {})))


def _normalize_fractions(fractions) -> dict[str, float]:
    if isinstance(fractions, Mapping):
        out = {str(k): float(v) for k, v in fractions.items()}
    else:
        names = ("train", "val", "test") if len(fractions) == 3 else ("train", "test") if len(fractions) == 2 else None
        if names is None:
            names = tuple(f"part{i}" for i in range(len(fractions)))
            if len(fractions) == 1:
                names = ("train",)
        out = dict(zip(names, (float(f) for f in fractions)))
    if not out or any(v <= 0 for v in out.values()):
        raise ValueError(f"split fractions must be positive, got {out}")
    if abs(math.fsum(out.values()) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {math.fsum(out.values())}")
    return out


def _allocate(n: int, fractions: Sequence[float], offset: int) -> list[int]:
    """Largest-remainder counts; ties rotate with ``offset`` so rounding spreads over bins."""
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    k = len(fractions)
    order = sorted(range(k), key=lambda i: (-(quotas[i] - counts[i]), (i - offset) % k))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(corpus: Sequence[PaintingRecord], fractions, bins: int = 10,
                     seed: int = 0) -> SplitManifest:
    """Split record ids so every mean-score bin follows ``fractions``.

    Labeled records are binned by the mean of their averaged target over
    ``bins`` equal-width bins on [0, 10]; unlabeled records form one extra
    stratum. Within a bin, subset sizes are within one record of
    ``fraction * bin size``. A bin smaller than the number of subsets is
    assigned round-robin and logged.
    """
    fr = _normalize_fractions(fractions)
    names = list(fr)
    weights = [fr[n] for n in names]
    strata: dict[int, list[str]] = {}
    for rec in corpus:
        target = rec.target
        if target is None:
            key = -1
        else:
            key = min(bins - 1, int(target.to_array().mean() / 10.0 * bins))
        strata.setdefault(key, []).append(rec.id)

    rng = np.random.default_rng(seed)
    subsets: dict[str, list[str]] = {n: [] for n in names}
    rotation = 0
    for key in sorted(strata):
        ids = sorted(strata[key])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        if len(ids) < len(names) and len(names) > 1:
            logger.warning("split bin %d has %d records for %d subsets; assigning round-robin",
                           key, len(ids), len(names))
            for rid in ids:
                subsets[names[rotation % len(names)]].append(rid)
                rotation += 1
            continue
        counts = _allocate(len(ids), weights, rotation)
        rotation += 1
        start = 0
        for name, c in zip(names, counts):
            subsets[name].extend(ids[start : start + c])
            start += c
    return SplitManifest(subsets=subsets, seed=seed, bins=bins, fractions=fr)
