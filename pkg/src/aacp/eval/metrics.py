"""Correlation and error metrics between predicted and ground-truth scores."""

from __future__ import annotations

import math

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no value for these inputs (e.g. a constant sample)."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {g.size} ground truths")
    return p, g


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(x.size)
    boundaries = np.flatnonzero(np.diff(sx)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [x.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e + 1)
    return ranks


def lcc(pred, gt) -> float:
    """Pearson linear correlation coefficient."""
    p, g = _pair(pred, gt)
    if p.size < 2:
        raise UndefinedMetricError("correlation needs at least two samples")
    pc, gc = p - p.mean(), g - g.mean()
    sp, sg = float(pc @ pc), float(gc @ gc)
    if sp == 0.0 or sg == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant sample")
    return float(np.clip((pc @ gc) / math.sqrt(sp * sg), -1.0, 1.0))


def srcc(pred, gt) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    p, g = _pair(pred, gt)
    return lcc(average_ranks(p), average_ranks(g))


def mse_metric(pred, gt) -> float:
    p, g = _pair(pred, gt)
    if p.size == 0:
        raise UndefinedMetricError("mse of empty samples")
    d = p - g
    return float(d @ d / d.size)


def score_histogram(scores, bins: int = 11, lo: float = 0.0, hi: float = 10.0) -> np.ndarray:
    """Normalised histogram on ``bins`` points ``lo, lo+w, ..., hi``; scores snap to the nearest."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise UndefinedMetricError("histogram of an empty sample")
    width = (hi - lo) / (bins - 1)
    idx = np.clip(np.floor((s - lo) / width + 0.5), 0, bins - 1).astype(np.intp)
    return np.bincount(idx, minlength=bins) / s.size


def emd_hist(p, q, width: float = 1.0) -> float:
    """1-D earth mover's distance between histograms on a common uniform grid."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"histogram shapes differ: {p.shape} vs {q.shape}")
    return float(np.abs(np.cumsum(p - q)).sum() * width)


def emd_1d(pred, gt, bins: int = 11, lo: float = 0.0, hi: float = 10.0) -> float:
    """EMD between the score histograms of two samples (scores on ``[lo, hi]``)."""
    width = (hi - lo) / (bins - 1)
    return emd_hist(score_histogram(pred, bins, lo, hi), score_histogram(gt, bins, lo, hi), width)


def emd_attributes(pred, gt, ordering: str = "dataset", bins: int = 11) -> float:
    """EMD for ``[N, 8]`` score sets on the 0-10 scale.

    ``"dataset"``: per attribute over the N samples, averaged over attributes.
    ``"image"``: per image over its 8 attribute scores, averaged over images.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2:
        raise ValueError(f"expected matching [N, K] arrays, got {p.shape} and {g.shape}")
    if ordering == "dataset":
        return float(np.mean([emd_1d(p[:, k], g[:, k], bins) for k in range(p.shape[1])]))
    if ordering == "image":
        return float(np.mean([emd_1d(p[i], g[i], bins) for i in range(p.shape[0])]))
    raise ValueError(f"unknown EMD ordering {ordering!r}")
