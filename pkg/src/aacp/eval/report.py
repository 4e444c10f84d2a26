"""Per-attribute metric report for a set of predictions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..data.attributes import ATTRIBUTES, SCORE_MAX
from .metrics import UndefinedMetricError, emd_1d, emd_attributes, lcc, mse_metric, srcc

METRIC_KEYS = ("srcc", "lcc", "emd", "mse")


def _safe(fn, *args) -> float | None:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


@dataclass
class MetricReport:
    per_attribute: dict[str, dict[str, float | None]]
    mean: dict[str, float | None]
    count: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_attribute": self.per_attribute, "mean": self.mean,
                "count": self.count, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["per_attribute"], d["mean"], int(d["count"]), d.get("config", {}))


def evaluate_scores(pred, gt, emd_ordering: str = "dataset", config: dict | None = None) -> MetricReport:
    """Metrics for ``[N, 8]`` predictions and targets on the normalised [0, 1] scale.

    MSE stays on the normalised scale; EMD is computed on the 0-10 score scale.
    Undefined entries (constant columns) are ``None``, and a mean with any
    undefined member is ``None`` too.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != len(ATTRIBUTES):
        raise ValueError(f"expected matching [N, {len(ATTRIBUTES)}] arrays, got {p.shape} and {g.shape}")
    if p.shape[0] == 0:
        raise UndefinedMetricError("no samples to evaluate")
    per = {}
    for k, name in enumerate(ATTRIBUTES):
        per[name] = {
            "srcc": _safe(srcc, p[:, k], g[:, k]),
            "lcc": _safe(lcc, p[:, k], g[:, k]),
            "emd": emd_1d(p[:, k] * SCORE_MAX, g[:, k] * SCORE_MAX),
            "mse": mse_metric(p[:, k], g[:, k]),
        }
    mean = {}
    for key in ("srcc", "lcc", "mse"):
        vals = [per[a][key] for a in ATTRIBUTES]
        mean[key] = None if any(v is None for v in vals) else math.fsum(vals) / len(vals)
    mean["emd"] = emd_attributes(p * SCORE_MAX, g * SCORE_MAX, ordering=emd_ordering)
    cfg = dict(config or {})
    cfg.setdefault("emd_ordering", emd_ordering)
    return MetricReport(per, {k: mean[k] for k in METRIC_KEYS}, int(p.shape[0]), cfg)
