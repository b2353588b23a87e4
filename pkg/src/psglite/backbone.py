"""Desk-scale stand-in for the frozen segmentation backbone.

A small ViT-style encoder (randomly initialized, never trained) supplies
multi-block patch features; a learned re-patching projects the concatenated
feature stack onto the relation neck's grid and width. The synthetic-scene
generator and the mask perturbation below stand in for a dataset and a real
panoptic segmenter: scenes are non-overlapping colored shapes whose
relations follow from geometry alone (left/right, above/below,
larger/smaller), so predicates are learnable from masks and pixels, and the
direction of every predicate genuinely matters.

The encoder runs in plain numpy (nothing here needs gradients) and its
attention layers accept a token-merge ratio; merge plans are built on the
attention-key projections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tome
from .autodiff import Tensor, matmul
from .counters import COUNTERS
from .kernels import pool_windows
from .mask_embed import BinaryMask
from .sgeval import GTSceneGraph

PREDICATES = ("left of", "right of", "above", "below", "larger than", "smaller than")
CLASS_NAMES = ("red", "green", "blue", "yellow", "magenta", "cyan",
               "orange", "violet", "teal", "olive")
_PALETTE = np.array([
    [0.85, 0.15, 0.15], [0.15, 0.75, 0.20], [0.20, 0.30, 0.90],
    [0.90, 0.85, 0.15], [0.85, 0.20, 0.80], [0.15, 0.80, 0.85],
    [0.95, 0.55, 0.10], [0.55, 0.20, 0.85], [0.10, 0.55, 0.55],
    [0.50, 0.55, 0.15],
])
_BACKGROUND = np.array([0.08, 0.08, 0.10])


# -- toy frozen encoder -------------------------------------------------------


@dataclass
class EncoderConfig:
    image_hw: int = 64
    patch: int = 8
    dim: int = 48
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    taps: tuple = (0, 1, 2, 3)

    @property
    def grid(self) -> int:
        if self.image_hw % self.patch != 0:
            raise ValueError("image size must be divisible by the patch size")
        return self.image_hw // self.patch

    @property
    def stack_channels(self) -> int:
        return len(self.taps) * self.dim


@dataclass
class FeatureStack:
    values: np.ndarray   # (grid*grid, channels)
    grid: int
    channels: int


@dataclass
class SyntheticImage:
    pixels: np.ndarray   # (H, W, 3) float64 in [0, 1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class PanopticOutput:
    masks: list[BinaryMask]
    logits: np.ndarray | None = None   # (N, H/stride, W/stride)


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = config.dim
    hidden = config.mlp_ratio * d
    pdim = 3 * config.patch * config.patch
    params = {
        "enc.patch_w": rng.normal(0.0, pdim ** -0.5, size=(pdim, d)),
        "enc.patch_b": np.zeros(d),
        "enc.pos": rng.normal(0.0, 0.02, size=(config.grid * config.grid, d)),
    }
    for i in range(config.depth):
        p = f"enc.block{i}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        for nm in ("wq", "wk", "wv", "wo"):
            params[p + nm] = rng.normal(0.0, d ** -0.5, size=(d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            params[p + nm] = np.zeros(d)
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "w1"] = rng.normal(0.0, d ** -0.5, size=(d, hidden))
        params[p + "b1"] = np.zeros(hidden)
        params[p + "w2"] = rng.normal(0.0, hidden ** -0.5, size=(hidden, d))
        params[p + "b2"] = np.zeros(d)
    return params


def _np_layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + 1e-12) + b


def _np_gelu(x: np.ndarray) -> np.ndarray:
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def _np_mha(x: np.ndarray, params: dict, prefix: str, heads: int) -> np.ndarray:
    L, d = x.shape
    dh = d // heads
    q = x @ params[prefix + "wq"] + params[prefix + "bq"]
    k = x @ params[prefix + "wk"] + params[prefix + "bk"]
    v = x @ params[prefix + "wv"] + params[prefix + "bv"]
    q = q.reshape(L, heads, dh).transpose(1, 0, 2)
    k = k.reshape(L, heads, dh).transpose(1, 0, 2)
    v = v.reshape(L, heads, dh).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) * dh ** -0.5
    COUNTERS.attn_macs += 2 * L * L * d
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ v).transpose(1, 0, 2).reshape(L, d)
    return out @ params[prefix + "wo"] + params[prefix + "bo"]


def extract_features(image: SyntheticImage, params: dict, config: EncoderConfig,
                     tome_ratio: float = 0.0) -> FeatureStack:
    """One frozen encoder pass; concatenates the tapped blocks' patch tokens."""
    g = config.grid
    p = config.patch
    px = image.pixels
    if px.shape[0] != config.image_hw or px.shape[1] != config.image_hw:
        raise ValueError("image does not match the encoder's configured size")
    patches = px.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, -1)
    x = patches @ params["enc.patch_w"] + params["enc.patch_b"] + params["enc.pos"]
    taps = []
    for i in range(config.depth):
        pref = f"enc.block{i}."
        y = _np_layernorm(x, params[pref + "ln1_g"], params[pref + "ln1_b"])
        if tome_ratio > 0.0:
            keys = y @ params[pref + "wk"] + params[pref + "bk"]
            attended = tome.wrapped_attention(
                y, tome_ratio,
                lambda toks: _np_mha(toks, params, pref, config.heads),
                sim_features=keys)
        else:
            attended = _np_mha(y, params, pref, config.heads)
        x = x + attended
        y2 = _np_layernorm(x, params[pref + "ln2_g"], params[pref + "ln2_b"])
        x = x + _np_gelu(y2 @ params[pref + "w1"] + params[pref + "b1"]) \
            @ params[pref + "w2"] + params[pref + "b2"]
        if i in config.taps:
            taps.append(x)
    stack = np.concatenate(taps, axis=1)
    return FeatureStack(stack, g, stack.shape[1])


def encoder_flops(config: EncoderConfig, tome_ratio: float = 0.0) -> int:
    """Closed-form FLOPs of one encoder pass, mirroring the code path.

    Token merging shrinks the per-layer attention from L to L' tokens
    (projections and mixing both run on merged tokens); the key projection
    used to build the merge plan runs at full length. The MLP always runs
    at full length because tokens are unmerged right after attention.
    """
    L = config.grid * config.grid
    d = config.dim
    a = len(range(0, L, 2))
    merged = int(tome_ratio * a)
    Lp = L - merged
    per_block = 4 * Lp * d * d + 2 * Lp * Lp * d + 2 * L * d * (config.mlp_ratio * d)
    if tome_ratio > 0.0:
        per_block += L * d * d
    patchify = L * (3 * config.patch * config.patch) * d
    return 2 * (config.depth * per_block + patchify)


# -- re-patching to the neck grid ---------------------------------------------


def repatch(stack: FeatureStack, out_grid: tuple[int, int], proj_w: Tensor,
            proj_b: Tensor, pos: Tensor) -> Tensor:
    """Flatten non-overlapping k x k feature windows and project to neck width.

    k = grid // out_h; trailing rows/cols that do not fill a window are
    dropped. Window elements are ordered (row, col, channel), row-major.
    """
    g = stack.grid
    oh, ow = out_grid
    if oh > g or ow > g:
        raise ValueError("output grid larger than the feature grid")
    k = g // oh
    kw = g // ow
    arr = stack.values.reshape(g, g, stack.channels)
    arr = arr[: oh * k, : ow * kw]
    windows = arr.reshape(oh, k, ow, kw, stack.channels)
    windows = windows.transpose(0, 2, 1, 3, 4).reshape(oh * ow, k * kw * stack.channels)
    tokens = matmul(Tensor(windows), proj_w) + proj_b
    return tokens + pos


# -- simulated panoptic inference ----------------------------------------------


def _dilate(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _erode(m: np.ndarray) -> np.ndarray:
    return ~_dilate(~m)


def masks_to_logits(masks: list[BinaryMask], stride: int = 4) -> np.ndarray:
    """Low-resolution mask logits: per-cell coverage mapped to [-1, 1]."""
    h, w = masks[0].bits.shape
    out = np.empty((len(masks), h // stride, w // stride))
    for i, m in enumerate(masks):
        soft = pool_windows(m.bits.astype(np.float64), h // stride, w // stride)
        out[i] = 2.0 * soft - 1.0
    return out


def simulate_inferred_masks(gt: PanopticOutput, jitter: float, seed: int,
                            stride: int = 4) -> PanopticOutput:
    """Perturb GT masks toward a target IoU of (1 - jitter) against GT.

    Each mask is dilated or eroded (step count chosen so the IoU lands
    nearest the target) and its boundary band gets random bit flips.
    Disjointness is then restored by pixel-wise argmax ownership. jitter 0
    returns exact copies.
    """
    if not (0.0 <= jitter <= 1.0):
        raise ValueError("jitter must be in [0, 1]")
    if jitter == 0.0:
        masks = [BinaryMask(m.bits.copy(), m.instance_id, m.class_label)
                 for m in gt.masks]
        return PanopticOutput(masks, masks_to_logits(masks, stride))

    rng = np.random.default_rng(seed)
    target = 1.0 - jitter
    h, w = gt.masks[0].bits.shape
    fields = []
    for m in gt.masks:
        grow = bool(rng.integers(0, 2))
        cur = m.bits.copy()
        best = cur
        best_err = abs(1.0 - target)
        for _ in range(max(h, w)):
            cur = _dilate(cur) if grow else _erode(cur)
            inter = int(np.logical_and(cur, m.bits).sum())
            union = int(np.logical_or(cur, m.bits).sum())
            iou = inter / union if union else 0.0
            if abs(iou - target) < best_err:
                best, best_err = cur.copy(), abs(iou - target)
            if iou < target or not cur.any():
                # IoU only falls from here on; the closest step is recorded
                break
        band = _dilate(best) & ~_erode(best)
        flips = band & (rng.random((h, w)) < 0.15 * jitter)
        noisy = best ^ flips
        if not noisy.any():
            ys, xs = np.nonzero(m.bits)
            noisy = np.zeros_like(m.bits)
            noisy[ys[len(ys) // 2], xs[len(xs) // 2]] = True
        fields.append(noisy)

    # argmax ownership: stack per-instance scores with a tiny deterministic
    # tiebreak so overlapping perturbed masks split cleanly
    scores = np.stack([f.astype(np.float64) * (1.0 - 1e-6 * i)
                       for i, f in enumerate(fields)])
    winner = np.argmax(scores, axis=0)
    any_on = scores.max(axis=0) > 0.0
    masks = []
    for i, m in enumerate(gt.masks):
        bits = (winner == i) & any_on
        if not bits.any():
            ys, xs = np.nonzero(m.bits)
            bits = np.zeros_like(m.bits)
            bits[ys[len(ys) // 2], xs[len(xs) // 2]] = True
        masks.append(BinaryMask(bits, m.instance_id, m.class_label))
    return PanopticOutput(masks, masks_to_logits(masks, stride))


# -- synthetic scenes ----------------------------------------------------------


def _shape_mask(shape: dict, hw: int) -> np.ndarray:
    y0, x0, y1, x1 = shape["bbox"]
    mask = np.zeros((hw, hw), dtype=bool)
    if shape["kind"] == "rect":
        mask[y0:y1, x0:x1] = True
        return mask
    cy = (y0 + y1 - 1) / 2.0
    cx = (x0 + x1 - 1) / 2.0
    ry = max((y1 - y0) / 2.0, 1.0)
    rx = max((x1 - x0) / 2.0, 1.0)
    yy, xx = np.mgrid[0:hw, 0:hw]
    mask[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = True
    return mask


def render_pixels(render: dict, hw: int) -> np.ndarray:
    px = np.empty((hw, hw, 3), dtype=np.float64)
    px[:, :] = np.asarray(render["background"], dtype=np.float64)
    for shape in render["shapes"]:
        m = _shape_mask(shape, hw)
        px[m] = np.asarray(shape["color"], dtype=np.float64)
    return px


def _directed_relations(axis: int, i: int, j: int, centers, areas) -> list:
    """Both directed predicates of one geometric axis, deterministic ties."""
    cy_i, cx_i = centers[i]
    cy_j, cx_j = centers[j]
    if axis == 0:      # horizontal: left of / right of
        left, right = (i, j) if (cx_i, i) < (cx_j, j) else (j, i)
        return [(left, right, 0), (right, left, 1)]
    if axis == 1:      # vertical: above / below
        up, down = (i, j) if (cy_i, i) < (cy_j, j) else (j, i)
        return [(up, down, 2), (down, up, 3)]
    big, small = (i, j) if (areas[i], j) > (areas[j], i) else (j, i)
    return [(big, small, 4), (small, big, 5)]


def synth_scene(seed: int, n_instances: int = 4, n_classes: int = 6,
                n_predicates: int = 6, image_hw: int = 64,
                mode: str = "priority", skew: tuple[float, ...] | None = None,
                p_rel: float = 0.9):
    """Deterministic synthetic scene with geometry-derived relations.

    Relations come in converse pairs per axis (left/right, above/below,
    larger/smaller), at most one predicate per ordered instance pair. In
    "priority" mode the axis with the largest normalized separation wins
    (subject to margins); in "skew" mode the axis is sampled proportional
    to `skew`, which fixes the predicate frequency distribution.
    Returns (SyntheticImage, PanopticOutput, GTSceneGraph, render_spec).
    """
    if n_instances < 2:
        raise ValueError("need at least two instances")
    if n_predicates not in (2, 4, 6):
        raise ValueError("predicate count must be 2, 4, or 6 (converse pairs)")
    if n_classes < 1 or n_classes > len(CLASS_NAMES):
        raise ValueError("class count out of range")
    n_axes = n_predicates // 2
    rng = np.random.default_rng(seed)

    shapes = []
    boxes = []
    attempts = 0
    while len(shapes) < n_instances:
        attempts += 1
        if attempts > 120 * n_instances:
            raise ValueError("cannot place this many instances on the canvas")
        half = rng.uniform(0.05, 0.15, size=2) * image_hw
        cy = rng.uniform(half[0] + 1, image_hw - half[0] - 1)
        cx = rng.uniform(half[1] + 1, image_hw - half[1] - 1)
        y0, y1 = int(round(cy - half[0])), int(round(cy + half[0]))
        x0, x1 = int(round(cx - half[1])), int(round(cx + half[1]))
        if y1 - y0 < 2 or x1 - x0 < 2:
            continue
        if any(y0 < b[2] + 1 and y1 > b[0] - 1 and x0 < b[3] + 1 and x1 > b[1] - 1
               for b in boxes):
            continue
        boxes.append((y0, x0, y1, x1))
        cls = int(rng.integers(0, n_classes))
        shapes.append({
            "kind": "rect" if rng.integers(0, 2) == 0 else "ellipse",
            "bbox": [y0, x0, y1, x1],
            "color": _PALETTE[cls].tolist(),
            "class": cls,
        })

    render = {"background": _BACKGROUND.tolist(), "shapes": shapes}
    pixels = render_pixels(render, image_hw)
    masks = []
    for idx, shape in enumerate(shapes):
        bits = _shape_mask(shape, image_hw)
        masks.append(BinaryMask(bits, instance_id=idx, class_label=shape["class"]))

    centers = []
    areas = []
    for m in masks:
        ys, xs = np.nonzero(m.bits)
        centers.append((ys.mean(), xs.mean()))
        areas.append(m.bits.sum())

    relations = []
    for i in range(n_instances):
        for j in range(i + 1, n_instances):
            if rng.random() > p_rel:
                continue
            dy = abs(centers[i][0] - centers[j][0]) / image_hw
            dx = abs(centers[i][1] - centers[j][1]) / image_hw
            ar = max(areas[i], areas[j]) / max(1, min(areas[i], areas[j]))
            if mode == "skew":
                weights = np.asarray(skew if skew is not None else [1.0] * n_axes,
                                     dtype=np.float64)[:n_axes]
                axis = int(rng.choice(n_axes, p=weights / weights.sum()))
            else:
                margin = 0.04
                strengths = [dx if dx > margin else -1.0,
                             dy if dy > margin else -1.0,
                             np.log(ar) / np.log(4.0) if ar > 1.15 else -1.0]
                strengths = strengths[:n_axes]
                if max(strengths) < 0.0:
                    continue
                axis = int(np.argmax(strengths))
            relations.extend(_directed_relations(axis, i, j, centers, areas))

    image = SyntheticImage(pixels)
    panoptic = PanopticOutput(masks)
    graph = GTSceneGraph([(m, m.class_label) for m in masks], relations)
    return image, panoptic, graph, render
