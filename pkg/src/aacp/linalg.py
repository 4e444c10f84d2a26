"""Dense linear algebra outside the gradient tape.

The SVD is a one-sided (Hestenes) Jacobi iteration. Column pairs are rotated in
round-robin rounds: every round pairs each column with exactly one partner, so
all rotations of a round are independent and are applied together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MAX_SWEEPS = 100
OFF_TOL = 1e-12


class LinalgError(ArithmeticError):
    """Base class for failures in this module."""


class NumericError(LinalgError):
    """Input contains NaN or infinity."""


class ConvergenceError(LinalgError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual off-diagonal {residual:.3e})")
        self.residual = residual


class RankError(LinalgError):
    """Matrix rank is below the requested number of components."""


class DomainError(LinalgError):
    """Matrix is not symmetric positive semi-definite within tolerance."""


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for a round-robin tournament on ``n`` columns (n-1 or n rounds)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        left, right = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= 0 and b >= 0:
                left.append(min(a, b))
                right.append(max(a, b))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(U: np.ndarray, S: np.ndarray, tiny: float) -> np.ndarray:
    """Replace columns belonging to zero singular values by orthonormal fill-ins."""
    m, r = U.shape
    good = S > tiny
    if good.all():
        return U
    Q = [U[:, j] for j in range(r) if good[j]]
    out = U.copy()
    candidates = iter(np.eye(m))
    for j in range(r):
        if good[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for q in Q:
                    v -= (q @ v) * q
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                v /= norm
                Q.append(v)
                out[:, j] = v
                break
    return out


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the largest-magnitude entry of every V column positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def _jacobi_tall(A: np.ndarray) -> SvdResult:
    m, n = A.shape
    Q = None
    if m > n:
        # precondition: orthogonal columns of Q carry over to U unchanged
        Q, R = np.linalg.qr(A)
        A = R
        m = n
    # rows of Wt are the working columns; row gathers are contiguous
    Wt = np.array(A.T, dtype=np.float64, order="C")
    Vt = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []
    off = 0.0
    for sweep in range(1, MAX_SWEEPS + 1):
        off = 0.0
        for p, q in rounds:
            wp, wq = Wt[p], Wt[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            denom = np.sqrt(alpha * beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            off = max(off, float(ratio.max()))
            active = ratio > OFF_TOL
            if not active.any():
                continue
            if not active.all():
                p, q = p[active], q[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
                wp, wq = wp[active], wq[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0] = 1.0
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            Wt[p] = c * wp - s * wq
            Wt[q] = s * wp + c * wq
            vp, vq = Vt[p], Vt[q]
            Vt[p] = c * vp - s * vq
            Vt[q] = s * vp + c * vq
        if off <= OFF_TOL:
            break
    else:
        raise ConvergenceError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps", off)

    S = np.linalg.norm(Wt, axis=1)
    order = np.argsort(-S, kind="stable")
    S, W, V = S[order], Wt[order].T, Vt[order].T
    tiny = max(S[0] if S.size else 0.0, 1.0) * np.finfo(np.float64).eps * max(A.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(S > tiny, W / np.where(S > 0, S, 1.0), 0.0)
    U = _complete_basis(U, S, tiny)
    if Q is not None:
        U = Q @ U
    U, V = _fix_signs(U, V)
    return SvdResult(U=np.ascontiguousarray(U), S=S, V=np.ascontiguousarray(V), sweeps=sweep)


def svd(A) -> SvdResult:
    """Thin SVD ``A = U diag(S) V^T`` with ``r = min(M, N)`` components.

    Singular values are descending and non-negative; the largest-magnitude
    entry of each column of ``V`` is positive.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or min(A.shape) < 1:
        raise ValueError(f"svd expects a non-empty matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise NumericError("svd input contains non-finite entries")
    m, n = A.shape
    if m >= n:
        return _jacobi_tall(A)
    res = _jacobi_tall(A.T)
    U, V = _fix_signs(res.V, res.U)
    return SvdResult(U=U, S=res.S, V=V, sweeps=res.sweeps)


def top_k_basis(A, k: int) -> np.ndarray:
    """Top-``k`` right singular vectors of the column-centred ``A`` as a D x k matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {A.shape}")
    if k < 1 or k > min(A.shape):
        raise RankError(f"cannot extract {k} components from a {A.shape} matrix")
    centred = A - A.mean(axis=0, keepdims=True)
    res = svd(centred)
    S = res.S
    if S[0] == 0 or S[k - 1] <= 1e-10 * S[0]:
        rank = int(np.sum(S > 1e-10 * S[0])) if S[0] > 0 else 0
        raise RankError(f"centred matrix has numerical rank {rank} < {k}")
    return np.ascontiguousarray(res.V[:, :k])


def sqrtm_psd(S, sym_tol: float = 1e-8, neg_tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny negatives."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError(f"sqrtm_psd expects a square matrix, got {S.shape}")
    if not np.isfinite(S).all():
        raise NumericError("sqrtm_psd input contains non-finite entries")
    scale = max(1.0, float(np.abs(S).max(initial=0.0)))
    if np.abs(S - S.T).max(initial=0.0) > sym_tol * scale:
        raise DomainError("matrix is not symmetric within tolerance")
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    if w.size and w.min() < -neg_tol * scale:
        raise DomainError(f"matrix is indefinite (min eigenvalue {w.min():.3e})")
    root = np.sqrt(np.clip(w, 0.0, None))
    R = (Q * root) @ Q.T
    return 0.5 * (R + R.T)
