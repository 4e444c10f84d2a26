"""Grad-CAM and SmoothGrad-averaged Grad-CAM on the last spatial feature map.

A model is anything with ``saliency_forward(x) -> (feature_map, raw_scores)``
where ``x`` is ``[1, 3, H, W]`` in [0, 1], ``feature_map`` is
``[1, C, h, w]`` and ``raw_scores`` is the pre-clamp ``[1, K]`` output.
"""

from __future__ import annotations

import warnings

import numpy as np

from .. import pnm
from .. import tensor as T
from ..tensor import Tensor


class SaliencyWarning(UserWarning):
    pass


def _as_input(image, dtype) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr.transpose(2, 0, 1)[None]
        arr = arr / 255.0 if np.asarray(image).dtype == np.uint8 else arr
    elif arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[:2] != (1, 3):
        raise T.ShapeError(f"expected one [H, W, 3] or [3, H, W] image, got {np.shape(image)}")
    return arr.astype(dtype)


def _cam_pass(model, x: np.ndarray, attribute: int) -> np.ndarray:
    """Un-normalised ReLU(sum_c alpha_c A_c) for a single input."""
    inp = Tensor(x, requires_grad=True)
    fmap, raw = model.saliency_forward(inp)
    if not 0 <= attribute < raw.shape[1]:
        raise IndexError(f"attribute index {attribute} outside 0..{raw.shape[1] - 1}")
    fmap.retain_grad()
    T.take(raw, np.array([attribute]), axis=1).sum().backward()
    grads = fmap.grad.astype(np.float64)[0]
    acts = fmap.data.astype(np.float64)[0]
    if hasattr(model, "zero_grad"):
        model.zero_grad()
    alpha = grads.mean(axis=(1, 2))
    return np.maximum(np.tensordot(alpha, acts, axes=1), 0.0)


def _normalize(cam: np.ndarray) -> np.ndarray:
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0.0:
        warnings.warn("saliency map is constant; returning zeros", SaliencyWarning, stacklevel=3)
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def _model_dtype(model):
    return getattr(model, "dtype", None) or T.get_default_dtype()


def grad_cam(model, image, attribute: int) -> np.ndarray:
    """Plain Grad-CAM heatmap, min-max normalised to [0, 1]."""
    x = _as_input(image, _model_dtype(model))
    return _normalize(_cam_pass(model, x, attribute))


def smooth_grad_cam(model, image, attribute: int, n: int = 8, noise_std: float = 0.1,
                    seed: int = 0) -> np.ndarray:
    """Grad-CAM averaged over ``n`` copies with Gaussian pixel noise.

    ``noise_std`` is relative to the [0, 1] pixel range.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    x = _as_input(image, _model_dtype(model))
    rng = np.random.default_rng(seed)
    total = None
    for _ in range(n):
        noisy = x if noise_std == 0 else (x + rng.normal(0.0, noise_std, x.shape)).astype(x.dtype)
        cam = _cam_pass(model, noisy, attribute)
        total = cam if total is None else total + cam
    return _normalize(total / n)


def heatmap_colors(heat: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to a blue-to-red ramp, ``[..., 3]`` floats."""
    h = np.clip(heat, 0.0, 1.0)[..., None]
    cold = np.array([0.0, 0.0, 1.0])
    mid = np.array([1.0, 1.0, 0.0])
    hot = np.array([1.0, 0.0, 0.0])
    low = cold + (mid - cold) * np.clip(2 * h, 0, 1)
    return np.where(h < 0.5, low, mid + (hot - mid) * np.clip(2 * h - 1, 0, 1))


def upsample(heat: np.ndarray, size: int) -> np.ndarray:
    factor = size // heat.shape[0]
    if factor * heat.shape[0] != size or heat.shape[0] != heat.shape[1]:
        raise T.ShapeError(f"cannot upsample {heat.shape} to {size}x{size}")
    return np.kron(heat, np.ones((factor, factor)))


def write_heatmap(heat: np.ndarray, image: np.ndarray, pgm_path, ppm_path, alpha: float = 0.5) -> None:
    """Write the heatmap as 8-bit PGM and a blended overlay as PPM."""
    gray = np.floor(np.clip(heat, 0, 1) * 255 + 0.5).astype(np.uint8)
    pnm.write(pgm_path, gray)
    big = upsample(heat, image.shape[0])
    base = image.astype(np.float64) / 255.0
    blend = (1 - alpha) * base + alpha * heatmap_colors(big)
    pnm.write(ppm_path, np.floor(np.clip(blend, 0, 1) * 255 + 0.5).astype(np.uint8))
