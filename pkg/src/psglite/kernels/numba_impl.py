"""numba-jitted twins of the numpy kernels.

Same arithmetic, explicit loops. bilinear_resize evaluates the identical
per-pixel expression as the numpy version, so the two agree bitwise; the
pooling sum runs in row-major order, which on 0/1 masks is exact as well.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def pool_windows(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValueError("pooling grid extents must be positive")
    h, w = x.shape
    kh, kw = h // out_h, w // out_w
    if kh < 1 or kw < 1:
        raise ValueError("pooling grid larger than input extent")
    out = np.empty((out_h, out_w), dtype=np.float64)
    # divide, never multiply by a reciprocal: keeps integer-sum windows
    # bit-identical to the numpy implementation
    cnt = float(kh * kw)
    for i in range(out_h):
        for j in range(out_w):
            s = 0.0
            for di in range(kh):
                row = i * kh + di
                base = j * kw
                for dj in range(kw):
                    s += x[row, base + dj]
            out[i, j] = s / cnt
    return out


@njit(cache=True)
def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValueError("resize extents must be positive")
    h, w = x.shape
    sy = h / out_h
    sx = w / out_w
    out = np.empty((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        fy = (i + 0.5) * sy - 0.5
        y0 = np.floor(fy)
        wy = fy - y0
        y0i = min(max(int(y0), 0), h - 1)
        y1i = min(max(int(y0) + 1, 0), h - 1)
        for j in range(out_w):
            fx = (j + 0.5) * sx - 0.5
            x0 = np.floor(fx)
            wx = fx - x0
            x0i = min(max(int(x0), 0), w - 1)
            x1i = min(max(int(x0) + 1, 0), w - 1)
            top = (1.0 - wx) * x[y0i, x0i] + wx * x[y0i, x1i]
            bot = (1.0 - wx) * x[y1i, x0i] + wx * x[y1i, x1i]
            out[i, j] = (1.0 - wy) * top + wy * bot
    return out


@njit(cache=True)
def rle_encode(flat: np.ndarray) -> np.ndarray:
    n = flat.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    n_runs = 1
    for i in range(1, n):
        if flat[i] != flat[i - 1]:
            n_runs += 1
    lead = 1 if flat[0] == 1 else 0
    runs = np.zeros(n_runs + lead, dtype=np.int64)
    idx = lead
    runs[idx] = 1
    for i in range(1, n):
        if flat[i] != flat[i - 1]:
            idx += 1
        runs[idx] += 1
    return runs


@njit(cache=True)
def rle_decode(runs: np.ndarray, n: int) -> np.ndarray:
    total = 0
    for k in range(runs.size):
        if runs[k] < 0:
            raise ValueError("negative run length")
        total += runs[k]
    if total != n:
        raise ValueError("run lengths do not sum to the mask size")
    out = np.zeros(n, dtype=np.uint8)
    pos = 0
    for k in range(runs.size):
        if k % 2 == 1:
            for i in range(pos, pos + runs[k]):
                out[i] = 1
        pos += runs[k]
    return out
