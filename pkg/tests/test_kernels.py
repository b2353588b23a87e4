"""Pixel-kernel semantics, plus numpy/numba implementation agreement."""

import os
import subprocess
import sys

import numpy as np
import pytest

from psglite import kernels
from psglite.kernels import numpy_impl

from oracles import pool_reference


def test_pool_matches_loop_reference():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        h = int(rng.integers(2, 40))
        w = int(rng.integers(2, 40))
        oh = int(rng.integers(1, h + 1))
        ow = int(rng.integers(1, w + 1))
        x = rng.random((h, w))
        assert np.allclose(numpy_impl.pool_windows(x, oh, ow),
                           pool_reference(x, oh, ow), atol=1e-14)


def test_pool_truncates_trailing():
    x = np.zeros((5, 5))
    x[4, :] = 100.0  # dropped row must not leak into any window
    x[:, 4] = 100.0
    out = numpy_impl.pool_windows(x, 2, 2)
    assert np.all(out == 0.0)


def test_pool_rejects_bad_grids():
    x = np.zeros((4, 4))
    with pytest.raises(ValueError):
        numpy_impl.pool_windows(x, 0, 2)
    with pytest.raises(ValueError):
        numpy_impl.pool_windows(x, 5, 2)


def test_resize_identity_and_constant():
    rng = np.random.default_rng(3)
    x = rng.random((7, 9))
    assert np.allclose(numpy_impl.bilinear_resize(x, 7, 9), x, atol=1e-15)
    c = np.full((3, 3), 2.5)
    up = numpy_impl.bilinear_resize(c, 12, 10)
    assert np.allclose(up, 2.5, atol=1e-15)


def test_resize_linear_ramp_preserved():
    # bilinear interpolation reproduces an affine function exactly away
    # from the clamped border
    x = np.arange(8.0)[None, :].repeat(8, axis=0)
    up = numpy_impl.bilinear_resize(x, 16, 16)
    inner = up[:, 2:-2]
    diffs = np.diff(inner, axis=1)
    assert np.allclose(diffs, diffs[0, 0], atol=1e-12)


def test_rle_round_trip():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 400))
        flat = (rng.random(n) < rng.random()).astype(np.uint8)
        runs = numpy_impl.rle_encode(flat)
        back = numpy_impl.rle_decode(runs, n)
        assert np.array_equal(back, flat)
        # alternating runs starting with zeros: leading-one masks get a 0 run
        if flat[0] == 1:
            assert runs[0] == 0


def test_rle_known_values():
    assert numpy_impl.rle_encode(np.array([0, 0, 1, 1, 1, 0], np.uint8)).tolist() \
        == [2, 3, 1]
    assert numpy_impl.rle_encode(np.array([1, 1, 0], np.uint8)).tolist() \
        == [0, 2, 1]
    assert numpy_impl.rle_encode(np.zeros(4, np.uint8)).tolist() == [4]
    assert numpy_impl.rle_encode(np.ones(4, np.uint8)).tolist() == [0, 4]


def test_rle_decode_validates():
    with pytest.raises(ValueError):
        numpy_impl.rle_decode(np.array([2, -1]), 1)
    with pytest.raises(ValueError):
        numpy_impl.rle_decode(np.array([2, 3]), 4)


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba unavailable")
class TestImplAgreement:
    def test_pool_bitwise_on_binary(self):
        # integer-valued inputs sum exactly in any order
        for seed in range(15):
            rng = np.random.default_rng(seed)
            h = int(rng.integers(4, 64))
            w = int(rng.integers(4, 64))
            oh = int(rng.integers(1, h + 1))
            ow = int(rng.integers(1, w + 1))
            x = (rng.random((h, w)) < 0.4).astype(np.float64)
            a = kernels.numpy_impl.pool_windows(x, oh, ow)
            b = kernels.numba_impl.pool_windows(x, oh, ow)
            assert np.array_equal(a, b)

    def test_pool_close_on_floats(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.random((33, 57))
            a = kernels.numpy_impl.pool_windows(x, 5, 9)
            b = kernels.numba_impl.pool_windows(x, 5, 9)
            assert np.allclose(a, b, rtol=0, atol=1e-13)

    def test_resize_bitwise(self):
        # same per-pixel expression on both sides, no reductions involved
        for seed in range(10):
            rng = np.random.default_rng(seed)
            h = int(rng.integers(2, 40))
            w = int(rng.integers(2, 40))
            oh = int(rng.integers(1, 90))
            ow = int(rng.integers(1, 90))
            x = rng.random((h, w))
            a = kernels.numpy_impl.bilinear_resize(x, oh, ow)
            b = kernels.numba_impl.bilinear_resize(x, oh, ow)
            assert np.array_equal(a, b)

    def test_rle_identical(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            flat = (rng.random(257) < 0.5).astype(np.uint8)
            a = kernels.numpy_impl.rle_encode(flat)
            b = kernels.numba_impl.rle_encode(flat)
            assert np.array_equal(a, b)
            assert np.array_equal(kernels.numpy_impl.rle_decode(a, 257),
                                  kernels.numba_impl.rle_decode(b, 257))


def test_env_flag_forces_numpy_fallback():
    env = dict(os.environ, PSGLITE_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from psglite import kernels; print(kernels.IMPL_NAME)"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"


def test_selected_impl_exports_match():
    assert kernels.IMPL_NAME in ("numpy", "numba")
    x = (np.random.default_rng(0).random((16, 16)) < 0.5).astype(np.float64)
    assert np.array_equal(kernels.pool_windows(x, 4, 4),
                          numpy_impl.pool_windows(x, 4, 4))
