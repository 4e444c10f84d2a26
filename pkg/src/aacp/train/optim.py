"""Adam with per-parameter state and global-norm gradient clipping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Moments keyed by parameter name; ``step`` counts applied updates."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in sorted(self.m):
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def scalars(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step": self.step, "skipped": self.skipped}

    @classmethod
    def from_parts(cls, scalars: dict, arrays: dict[str, np.ndarray]) -> "OptimizerState":
        st = cls(beta1=scalars["beta1"], beta2=scalars["beta2"], eps=scalars["eps"],
                 step=int(scalars["step"]), skipped=int(scalars.get("skipped", 0)))
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            (st.m if kind == "m" else st.v)[name] = np.array(arr, dtype=np.float64)
        return st


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by a common factor so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if not math.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              rate: float) -> bool:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    Returns False (nothing touched but the skip counter) when any gradient
    is non-finite.
    """
    if not rate > 0:
        raise ValueError(f"learning rate must be positive, got {rate}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])} for {name!r}")
    bad = [name for name, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        state.skipped += 1
        logger.warning("non-finite gradient in %s; optimizer step skipped", ", ".join(sorted(bad)))
        return False
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype)
    return True
