"""SVD-disentangled evaluation head.

Fused features are centred on the buffer mean, divided by the buffer's
per-dimension spread (by default) and projected onto the top-8 right singular
vectors of that standardised buffer; attribute ``k`` is a scalar affine
function of coordinate ``k`` alone. The projection basis is a constant
between refreshes and never receives gradient.

Standardising matters because the fused vector concatenates two branches whose
raw variances differ by orders of magnitude; without it the top singular
vectors lie almost entirely in the larger branch.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .. import linalg
from ..tensor import Tensor, nn
from .config import NUM_ATTRIBUTES

logger = logging.getLogger(__name__)

# per-dimension variance floor, relative to the largest buffer variance
SCALE_FLOOR = 1e-3


class RefreshWarning(UserWarning):
    pass


class DisentangledHead(nn.Module):
    def __init__(self, dim: int, capacity: int = 512, min_rows: int = 64, k: int = NUM_ATTRIBUTES,
                 standardize: bool = True):
        self.dim = dim
        self.k = k
        self.capacity = capacity
        self.min_rows = min_rows
        self.standardize = standardize
        self.weight = nn.parameter(np.zeros(k))
        self.bias = nn.parameter(np.full(k, 0.5))
        basis = np.eye(dim, k)
        self.basis = Tensor(basis)
        self.basis.grad = np.zeros_like(self.basis.data)
        self.center = np.zeros(dim)
        self.scale = np.ones(dim)
        self.buffer = np.zeros((capacity, dim))
        self.count = 0
        self.cursor = 0
        self.refreshes = 0

    # -- buffer -------------------------------------------------------
    def push(self, features: np.ndarray) -> None:
        """Append detached fused vectors ``[B, D]`` to the ring buffer."""
        feats = np.asarray(features, dtype=np.float64).reshape(-1, self.dim)
        for row in feats:
            self.buffer[self.cursor] = row
            self.cursor = (self.cursor + 1) % self.capacity
            self.count = min(self.count + 1, self.capacity)

    def buffer_rows(self) -> np.ndarray:
        """Buffer contents in insertion order."""
        if self.count < self.capacity:
            return self.buffer[: self.count].copy()
        return np.concatenate([self.buffer[self.cursor :], self.buffer[: self.cursor]])

    def refresh(self, align: bool = True) -> bool:
        """Recompute basis and centre from the buffer.

        With ``align`` (used during training) the new columns are matched to the
        previous basis by maximum overlap and sign, so head ``k`` keeps reading
        the direction it was fitted to. Returns False, keeping the old basis,
        when the buffer is too small or rank deficient.
        """
        rows = self.buffer_rows()
        if len(rows) < self.min_rows:
            warnings.warn(f"basis refresh skipped: {len(rows)} buffered rows < {self.min_rows}",
                          RefreshWarning, stacklevel=2)
            return False
        center, scale = rows.mean(axis=0), self._spread(rows)
        try:
            basis = linalg.top_k_basis((rows - center) / scale, self.k)
        except linalg.RankError as exc:
            warnings.warn(f"basis refresh skipped: {exc}", RefreshWarning, stacklevel=2)
            return False
        if align and self.refreshes > 0:
            basis = align_basis(basis, self.basis.data.astype(np.float64))
        self.basis.data = basis.astype(self.basis.dtype)
        self.basis.grad = np.zeros_like(self.basis.data)
        self.center, self.scale = center, scale
        self.refreshes += 1
        return True

    def _spread(self, rows: np.ndarray) -> np.ndarray:
        if not self.standardize:
            return np.ones(self.dim)
        var = rows.var(axis=0)
        return np.sqrt(var + SCALE_FLOOR * max(float(var.max()), 1e-12))

    def coordinates(self, features: np.ndarray) -> np.ndarray:
        """Projected coordinates of detached ``[N, D]`` features (float64)."""
        f = np.asarray(features, dtype=np.float64).reshape(-1, self.dim)
        return (f - self.center) / self.scale @ self.basis.data.astype(np.float64)

    def calibrate(self, features: np.ndarray, targets: np.ndarray) -> None:
        """Data-dependent start for the scalar heads.

        Assigns singular directions to attributes by largest absolute
        correlation (the columns stay the same set of singular vectors, so the
        coordinates remain uncorrelated), orients each so the correlation is
        positive, then sets each head's weight and bias by least squares.
        """
        y = np.asarray(targets, dtype=np.float64).reshape(-1, self.k)
        z = self.coordinates(features)
        if len(z) != len(y):
            raise ValueError(f"{len(z)} feature rows but {len(y)} target rows")
        zc, yc = z - z.mean(axis=0), y - y.mean(axis=0)
        zn = np.sqrt((zc * zc).sum(axis=0))
        yn = np.sqrt((yc * yc).sum(axis=0))
        corr = (zc.T @ yc) / np.maximum(np.outer(zn, yn), 1e-300)
        # align_basis matches columns of old (here: attributes) to new (coordinates)
        basis = align_basis(self.basis.data.astype(np.float64), None, overlap=corr.T)
        self.basis.data = basis.astype(self.basis.dtype)
        z = self.coordinates(features)
        zc = z - z.mean(axis=0)
        denom = (zc * zc).sum(axis=0)
        w = np.where(denom > 0, (zc * yc).sum(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)
        self.weight.data = w.astype(self.weight.dtype)
        self.bias.data = (y.mean(axis=0) - w * z.mean(axis=0)).astype(self.bias.dtype)

    # -- forward ------------------------------------------------------
    def project(self, fused: Tensor) -> Tensor:
        centre = self.center.astype(fused.dtype)
        inv = (1.0 / self.scale).astype(fused.dtype)
        return ((fused - centre) * inv) @ self.basis

    def forward(self, fused: Tensor) -> Tensor:
        """Pre-clamp normalised scores ``[N, 8]``."""
        return self.project(fused) * self.weight + self.bias

    # -- state --------------------------------------------------------
    def extra_state(self) -> dict[str, np.ndarray]:
        return {
            "basis": self.basis.data.copy(),
            "center": self.center.copy(),
            "scale": self.scale.copy(),
            "buffer": self.buffer.copy(),
            "buffer_meta": np.array([self.count, self.cursor, self.refreshes], dtype=np.int64),
        }

    def load_extra_state(self, state: dict) -> None:
        self.basis.data = np.asarray(state["basis"], dtype=self.basis.dtype).copy()
        self.basis.grad = np.zeros_like(self.basis.data)
        self.center = np.asarray(state["center"], dtype=np.float64).copy()
        self.scale = np.asarray(state["scale"], dtype=np.float64).copy()
        self.buffer = np.asarray(state["buffer"], dtype=np.float64).copy()
        self.count, self.cursor, self.refreshes = (int(v) for v in state["buffer_meta"])

    def astype(self, dtype):
        super().astype(dtype)
        self.basis = Tensor(self.basis.data, dtype=dtype)
        self.basis.grad = np.zeros_like(self.basis.data)
        return self


def align_basis(new: np.ndarray, old: np.ndarray | None, overlap: np.ndarray | None = None) -> np.ndarray:
    """Permute and sign-flip the columns of ``new`` to best match ``old``.

    Greedy assignment on absolute column overlap ``old.T @ new`` (or a given
    ``overlap[i, j]`` scoring target slot ``i`` against column ``j``); columns
    stay the same set of singular vectors, so the projected coordinates remain
    uncorrelated.
    """
    if overlap is None:
        overlap = old.T @ new
    k = new.shape[1]
    out = np.empty_like(new)
    free_old, free_new = set(range(k)), set(range(k))
    order = np.argsort(-np.abs(overlap), axis=None, kind="stable")
    for flat in order:
        i, j = divmod(int(flat), k)
        if i in free_old and j in free_new:
            sign = 1.0 if overlap[i, j] >= 0 else -1.0
            out[:, i] = sign * new[:, j]
            free_old.discard(i)
            free_new.discard(j)
            if not free_old:
                break
    return out
