from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MaskShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MaskLayout:
    """Partition of the patch grid into visible and masked token ids.

    Token ids are row-major over the ``grid x grid`` patch grid. Both id sets
    are stored sorted.
    """

    patch: int
    grid: int
    visible: np.ndarray
    masked: np.ndarray

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def ratio(self) -> float:
        return len(self.masked) / self.num_patches

    def visible_flags(self) -> np.ndarray:
        flags = np.ones(self.num_patches, dtype=bool)
        flags[self.masked] = False
        return flags

    def pixel_mask(self, size: int | None = None) -> np.ndarray:
        """``[H, W]`` float mask, 1 on visible patches, at ``size`` resolution.

        ``size`` may be any multiple of the grid (feature maps of the encoder's
        conv stages use coarser resolutions).
        """
        size = size or self.grid * self.patch
        if size % self.grid:
            raise MaskShapeError(f"size {size} is not a multiple of grid {self.grid}")
        cell = size // self.grid
        flags = self.visible_flags().reshape(self.grid, self.grid).astype(np.float64)
        return np.kron(flags, np.ones((cell, cell)))


def mask_patches(image, ratio: float, patch: int = 16, seed: int = 0) -> MaskLayout:
    """Choose ``floor(ratio * P)`` of the ``P`` patches uniformly without replacement.

    ``image`` may be ``H x W x C`` pixels or just an ``(H, W)`` extent pair.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio {ratio} outside [0, 1]")
    shape = tuple(image) if isinstance(image, tuple) else np.shape(image)[:2]
    h, w = shape[:2]
    if h % patch or w % patch:
        raise MaskShapeError(f"image extents {h}x{w} not divisible by patch {patch}")
    if h != w:
        raise MaskShapeError(f"square images required, got {h}x{w}")
    grid = h // patch
    total = grid * grid
    n_masked = math.floor(ratio * total + 1e-9)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])
    return MaskLayout(patch=patch, grid=grid, visible=visible, masked=masked)
