"""Patch-overlap ratios and the weighted subject/object mask embedding.

For an ordered mask pair (S0, S1) each patch token is shifted by

    token = patch + r_s * t_s + r_o * t_o + (1 - r_s - r_o) * t_bg

where r_s, r_o are the fractions of the patch's pixel area covered by the
subject and object mask. The ratios are plain window averages of the mask,
so they can be computed once per mask and reused across every pair the
instance participates in; `ratios_per_pair` keeps the naive
copy-two-masks-then-pool variant alive purely as an equivalence and cost
baseline. Pool-call and upsample counters make the cost difference an
assertable count rather than a timing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, mul
from .counters import COUNTERS


@dataclass
class BinaryMask:
    bits: np.ndarray  # (H, W) bool
    instance_id: int
    class_label: int

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class OverlapRatios:
    grid_h: int
    grid_w: int
    values: np.ndarray  # (grid_h, grid_w) float64 in [0, 1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass
class MaskEmbedTokens:
    t_s: Tensor
    t_o: Tensor
    t_bg: Tensor

    @property
    def dim(self) -> int:
        return self.t_s.shape[0]


def _pool(field: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    COUNTERS.pool_calls += 1
    return kernels.pool_windows(np.ascontiguousarray(field, dtype=np.float64), *grid)


def ratios_pooled(masks: list[BinaryMask], grid: tuple[int, int]) -> list[OverlapRatios]:
    """Pool every mask exactly once; results are reusable across all pairs."""
    if not masks:
        raise ValueError("need at least one mask")
    out = []
    for m in masks:
        vals = _pool(m.bits, grid)
        out.append(OverlapRatios(grid[0], grid[1], vals))
    return out


def ratios_per_pair(masks: list[BinaryMask], pairs: list[tuple[int, int]],
                    grid: tuple[int, int]) -> list[tuple[OverlapRatios, OverlapRatios]]:
    """Naive baseline: copy both masks of every pair, then pool the copies.

    2 * len(pairs) pool calls and as many transient mask buffers, against N
    for the pooled path. Kept only for the equivalence check and the cost
    benchmark; never used by the pipeline.
    """
    out = []
    for i, j in pairs:
        ms = masks[i]
        mo = masks[j]
        pair_s = ms.bits.astype(np.float64)  # the per-pair allocation
        pair_o = mo.bits.astype(np.float64)
        r_s = OverlapRatios(grid[0], grid[1], _pool(pair_s, grid))
        r_o = OverlapRatios(grid[0], grid[1], _pool(pair_o, grid))
        out.append((r_s, r_o))
    return out


def ratios_from_logits(mask_logits: np.ndarray, grid: tuple[int, int],
                       threshold: float = 0.0, binarize: bool = True) -> list[OverlapRatios]:
    """Low-resolution path: pool mask logits straight to the patch grid.

    No upsampling to image size happens here; logits are binarized at
    `threshold` (or squashed to probabilities with binarize=False) and pooled
    directly at their native resolution.
    """
    out = []
    for lg in mask_logits:
        if binarize:
            field = (lg > threshold).astype(np.float64)
        else:
            field = 1.0 / (1.0 + np.exp(-lg))
        out.append(OverlapRatios(grid[0], grid[1], _pool(field, grid)))
    return out


def ratios_upsampled_reference(mask_logits: np.ndarray, grid: tuple[int, int],
                               image_hw: tuple[int, int],
                               threshold: float = 0.0) -> list[OverlapRatios]:
    """Reference path: bilinear-upsample logits to image size, binarize, pool."""
    out = []
    for lg in mask_logits:
        COUNTERS.upsample_calls += 1
        up = kernels.bilinear_resize(np.ascontiguousarray(lg, dtype=np.float64),
                                     image_hw[0], image_hw[1])
        field = (up > threshold).astype(np.float64)
        out.append(OverlapRatios(grid[0], grid[1], _pool(field, grid)))
    return out


def embed_pair(patches: Tensor, r_s: OverlapRatios, r_o: OverlapRatios,
               tokens: MaskEmbedTokens) -> Tensor:
    """Apply the weighted mask embedding to all patch tokens at once."""
    p, d = patches.shape
    if r_s.flat.shape[0] != p or r_o.flat.shape[0] != p:
        raise ValueError("ratio grids do not match the patch count")
    if tokens.dim != d:
        raise ValueError("embedding token dim does not match patches")
    ws = Tensor(r_s.flat[:, None])
    wo = Tensor(r_o.flat[:, None])
    wbg = Tensor((1.0 - r_s.flat - r_o.flat)[:, None])
    out = patches + mul(ws, tokens.t_s) + mul(wo, tokens.t_o) + mul(wbg, tokens.t_bg)
    return out
