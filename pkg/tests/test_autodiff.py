"""Gradient and tape-mechanics tests for the autodiff core.

Every op gets a central finite-difference check in float64. The tolerance
is deliberately tighter than the 1e-5 the acceptance gate uses, so any
regression shows up here first.
"""

import numpy as np
import pytest

from psglite import autodiff as ad
from psglite.autodiff import Tensor

from oracles import finite_diff, rel_error

TOL = 1e-7


def _check(build, params, seed_count=5, tol=TOL):
    """build(tensors) -> scalar Tensor; params: list of shapes to draw."""
    for seed in range(seed_count):
        rng = np.random.default_rng(seed)
        tensors = [Tensor(rng.normal(size=s), requires_grad=True) for s in params]
        loss = build(tensors)
        loss.backward()
        for t in tensors:
            # fresh Tensors over the same buffers, so finite_diff can poke them
            def f_live():
                vals = [Tensor(u.data) for u in tensors]
                return build(vals).item()
            fd = finite_diff(f_live, t.data)
            assert rel_error(t.grad, fd) < tol, (t.shape, rel_error(t.grad, fd))


def test_add_mul_grads():
    _check(lambda ts: (ts[0] * ts[1] + ts[0]).sum(), [(4, 3), (4, 3)])


def test_broadcast_bias_grad():
    # (N, D) + (D,) bias: gradient on the bias sums over rows
    _check(lambda ts: (ts[0] + ts[1]).sum(), [(5, 4), (4,)])
    _check(lambda ts: (ts[0] * ts[1]).sum(), [(5, 4), (4,)])


def test_scalar_broadcast():
    _check(lambda ts: (ts[0] * 3.0 - 1.0).mean(), [(6,)])


def test_matmul_grads_2d():
    _check(lambda ts: (ts[0] @ ts[1]).sum(), [(3, 4), (4, 5)])


def test_matmul_grads_batched():
    _check(lambda ts: (ts[0] @ ts[1]).sum(), [(2, 3, 4), (2, 4, 5)])


def test_sigmoid_gelu_grads():
    _check(lambda ts: ad.sigmoid(ts[0]).sum(), [(4, 4)])
    _check(lambda ts: ad.gelu(ts[0]).sum(), [(4, 4)])


def test_layernorm_grads():
    _check(lambda ts: ad.layernorm(ts[0], ts[1], ts[2]).sum(),
           [(3, 6), (6,), (6,)], tol=1e-6)
    # weighted output so the gradient is not constant over the row
    def weighted(ts):
        y = ad.layernorm(ts[0], ts[1], ts[2])
        w = Tensor(np.arange(1.0, 7.0))
        return (y * w).sum()
    _check(weighted, [(3, 6), (6,), (6,)], tol=1e-6)


def test_softmax_grad():
    def build(ts):
        w = Tensor(np.linspace(-1.0, 1.0, 12).reshape(3, 4))
        return (ad.softmax(ts[0]) * w).sum()
    _check(build, [(3, 4)])


def test_bce_with_logits_matches_fd():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        z = Tensor(rng.normal(size=(7,)) * 3, requires_grad=True)
        y = (rng.random(7) < 0.5).astype(np.float64)
        loss = ad.bce_with_logits(z, y)
        loss.backward()
        fd = finite_diff(lambda: ad.bce_with_logits(Tensor(z.data), y).item(),
                         z.data)
        assert rel_error(z.grad, fd) < TOL


def test_bce_rejects_soft_targets():
    with pytest.raises(ValueError):
        ad.bce_with_logits(Tensor(np.zeros(3)), np.array([0.0, 0.5, 1.0]))


def test_bce_extreme_logits_finite():
    z = Tensor(np.array([1000.0, -1000.0]), requires_grad=True)
    loss = ad.bce_with_logits(z, np.array([1.0, 0.0]))
    assert loss.item() == 0.0
    loss2 = ad.bce_with_logits(Tensor(np.array([-1000.0])), np.array([1.0]))
    assert np.isfinite(loss2.item()) and loss2.item() == 1000.0


def test_mse_grad():
    _check(lambda ts: ad.mse(ts[0], ts[1]), [(5, 3), (5, 3)])


def test_avg_pool_grad_divisible_and_truncating():
    _check(lambda ts: (ad.avg_pool2d(ts[0], 2, 2)
                       * Tensor(np.arange(8.0).reshape(2, 2, 2))).sum(),
           [(2, 4, 4)])
    # 5x7 onto 2x3: trailing row/col ignored, zero grad there
    x = Tensor(np.random.default_rng(0).normal(size=(1, 5, 7)),
               requires_grad=True)
    ad.avg_pool2d(x, 2, 3).sum().backward()
    assert np.all(x.grad[:, 4, :] == 0.0)
    assert np.all(x.grad[:, :, 6] == 0.0)
    assert np.all(x.grad[:, :4, :6] != 0.0)


def test_pool_forward_matches_reference():
    from oracles import pool_reference
    for seed in range(10):
        rng = np.random.default_rng(seed)
        h, w = rng.integers(4, 20, size=2)
        oh = int(rng.integers(1, h + 1))
        ow = int(rng.integers(1, w + 1))
        x = rng.random((1, h, w))
        got = ad.avg_pool2d(Tensor(x), oh, ow).data[0]
        want = pool_reference(x[0], oh, ow)
        assert np.allclose(got, want, atol=1e-14)


def test_reshape_transpose_concat_take_rows_grads():
    _check(lambda ts: ts[0].reshape(6, 2).sum(), [(3, 4)])
    _check(lambda ts: (ts[0].transpose((1, 0))
                       * Tensor(np.arange(12.0).reshape(4, 3))).sum(),
           [(3, 4)])
    _check(lambda ts: ad.concat([ts[0], ts[1]], axis=0).sum(),
           [(2, 3), (4, 3)])
    idx = np.array([0, 2, 2, 1])
    _check(lambda ts: (ad.take_rows(ts[0], idx)
                       * Tensor(np.arange(12.0).reshape(4, 3))).sum(),
           [(3, 3)])


def test_take_rows_duplicate_index_accumulates():
    x = Tensor(np.ones((3, 2)), requires_grad=True)
    ad.take_rows(x, np.array([1, 1, 1])).sum().backward()
    assert np.allclose(x.grad[1], 3.0)
    assert np.allclose(x.grad[0], 0.0)


def test_disconnected_param_zero_grad():
    # a requires-grad tensor never touched by the loss still has grad zeros
    used = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    (used * 2.0).sum().backward()
    assert unused.grad is not None
    assert np.all(unused.grad == 0.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_tape_single_use():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_grad_accumulates_across_backwards():
    x = Tensor(np.ones(3), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.allclose(x.grad, 5.0)
    x.zero_grad()
    assert np.all(x.grad == 0.0)


def test_no_grad_blocks_taping():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y._parents == ()
    assert ad.grad_enabled()


def test_shared_subexpression_grad():
    # y used twice: gradient must accumulate through both uses
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        def build(t):
            y = t * 2.0
            return (y * y + y).sum()
        build(x).backward()
        fd = finite_diff(lambda: build(Tensor(x.data)).item(), x.data)
        assert rel_error(x.grad, fd) < TOL


def test_matmul_counts_macs():
    from psglite.counters import COUNTERS
    COUNTERS.reset()
    a = Tensor(np.ones((3, 4)))
    b = Tensor(np.ones((4, 5)))
    a @ b
    assert COUNTERS.macs == 3 * 4 * 5
    COUNTERS.reset()
    Tensor(np.ones((2, 3, 4))) @ Tensor(np.ones((2, 4, 5)))
    assert COUNTERS.macs == 2 * 3 * 4 * 5
    COUNTERS.reset()
