"""Frechet distance between Gaussian fits of feature sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import linalg

SHRINKAGE = 1e-6


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and covariance {cov.shape} do not agree")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-8):
            raise linalg.DomainError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_features(cls, features) -> "GaussianStats":
        """Mean and unbiased covariance of ``[N, F]`` features.

        With fewer than ``F + 1`` samples the covariance is rank deficient and
        gets a small ridge.
        """
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError(f"need at least two [N, F] feature rows, got shape {x.shape}")
        n, f = x.shape
        mean = x.mean(axis=0)
        centred = x - mean
        cov = centred.T @ centred / (n - 1)
        cov = 0.5 * (cov + cov.T)
        if n < f + 1:
            cov = cov + SHRINKAGE * np.eye(f)
        return cls(mean, cov, n)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "count": self.count}


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    root_a = linalg.sqrtm_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    inner = 0.5 * (inner + inner.T)
    cross = linalg.sqrtm_psd(inner)
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)
