"""Vectorized numpy reference implementations of the pixel kernels.

These are the semantics of record: the numba twins in `numba_impl` must match
them bitwise on integer-valued inputs and to the last few ulps on float
inputs (reduction order differs for window sums over floats).
"""

from __future__ import annotations

import numpy as np


def pool_windows(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average-pool a 2-D array onto an out_h x out_w grid.

    Window sizes are kh = H // out_h, kw = W // out_w. Windows tile the
    top-left (out_h*kh) x (out_w*kw) region; trailing rows/cols that do not
    fill a window are dropped. Each output cell is the arithmetic mean of
    its window.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("pooling grid extents must be positive")
    h, w = x.shape
    kh, kw = h // out_h, w // out_w
    if kh < 1 or kw < 1:
        raise ValueError("pooling grid larger than input extent")
    trimmed = x[: out_h * kh, : out_w * kw]
    return trimmed.reshape(out_h, kh, out_w, kw).sum(axis=(1, 3)) / float(kh * kw)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-center alignment and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError("resize extents must be positive")
    h, w = x.shape
    sy = h / out_h
    sx = w / out_w
    fy = (np.arange(out_h, dtype=np.float64) + 0.5) * sy - 0.5
    fx = (np.arange(out_w, dtype=np.float64) + 0.5) * sx - 0.5
    y0 = np.floor(fy)
    x0 = np.floor(fx)
    wy = fy - y0
    wx = fx - x0
    y0i = np.clip(y0, 0, h - 1).astype(np.int64)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    x0i = np.clip(x0, 0, w - 1).astype(np.int64)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    wy = wy[:, None]
    wx = wx[None, :]
    a = x[np.ix_(y0i, x0i)]
    b = x[np.ix_(y0i, x1i)]
    c = x[np.ix_(y1i, x0i)]
    d = x[np.ix_(y1i, x1i)]
    top = (1.0 - wx) * a + wx * b
    bot = (1.0 - wx) * c + wx * d
    return (1.0 - wy) * top + wy * bot


def rle_encode(flat: np.ndarray) -> np.ndarray:
    """Run-length encode a flat 0/1 array.

    Runs alternate value starting with zeros, so a mask beginning with a one
    gets a leading zero-length run. Row-major flattening is the caller's job.
    """
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    n = flat.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds).astype(np.int64)
    if flat[0] == 1:
        runs = np.concatenate(([np.int64(0)], runs))
    return runs


def rle_decode(runs: np.ndarray, n: int) -> np.ndarray:
    """Invert rle_encode back to a flat uint8 0/1 array of length n."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.size and runs.min() < 0:
        raise ValueError("negative run length")
    if int(runs.sum()) != n:
        raise ValueError("run lengths do not sum to the mask size")
    vals = (np.arange(runs.size, dtype=np.int64) % 2).astype(np.uint8)
    return np.repeat(vals, runs)
