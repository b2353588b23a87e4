"""Pruning, the pre-norm neck forward, FLOP model, and gradients."""

import numpy as np
import pytest

from psglite.autodiff import Tensor
from psglite.counters import COUNTERS
from psglite.mask_embed import OverlapRatios
from psglite.neck import (NeckConfig, TokenSequence, flop_estimate, flop_terms,
                          init_neck, neck_forward, prune_patches)

from oracles import (attention_reference, finite_diff, mlp2_reference,
                     np_layernorm, rel_error)


def _seq(rng, p, d, keep_map=None):
    return TokenSequence(
        class_token=Tensor(rng.normal(size=d), requires_grad=True),
        location_token=Tensor(rng.normal(size=d), requires_grad=True),
        patch_tokens=Tensor(rng.normal(size=(p, d)), requires_grad=True),
        keep_map=np.arange(p) if keep_map is None else keep_map,
    )


def _ratios(vals):
    vals = np.asarray(vals, dtype=np.float64)
    return OverlapRatios(vals.shape[0], vals.shape[1], vals)


def test_prune_matches_bruteforce():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        g = int(rng.integers(2, 9))
        p = g * g
        rs = np.where(rng.random((g, g)) < 0.5, rng.random((g, g)), 0.0)
        ro = np.where(rng.random((g, g)) < 0.5, rng.random((g, g)), 0.0)
        seq = _seq(rng, p, 4)
        pruned = prune_patches(seq, _ratios(rs), _ratios(ro))
        want = [i for i in range(p) if rs.ravel()[i] > 0 or ro.ravel()[i] > 0]
        assert pruned.keep_map.tolist() == want
        assert np.array_equal(pruned.patch_tokens.data,
                              seq.patch_tokens.data[want])


def test_prune_boundary_is_strictly_positive():
    rs = np.zeros((2, 2))
    ro = np.zeros((2, 2))
    rs[0, 0] = 1e-300      # any nonzero coverage survives
    seq = _seq(np.random.default_rng(0), 4, 4)
    pruned = prune_patches(seq, _ratios(rs), _ratios(ro))
    assert pruned.keep_map.tolist() == [0]


def test_prune_composes_with_prior_selection():
    rng = np.random.default_rng(1)
    seq = _seq(rng, 3, 4, keep_map=np.array([0, 2, 5]))
    rs = np.zeros((2, 3))
    rs.ravel()[2] = 0.5    # only original patch 2 has coverage
    pruned = prune_patches(seq, _ratios(rs), _ratios(np.zeros((2, 3))))
    assert pruned.keep_map.tolist() == [2]
    assert np.array_equal(pruned.patch_tokens.data, seq.patch_tokens.data[1:2])


def test_prune_grid_mismatch_errors():
    seq = _seq(np.random.default_rng(2), 4, 4, keep_map=np.arange(9))
    with pytest.raises(ValueError):
        prune_patches(seq, _ratios(np.ones((2, 2))), _ratios(np.ones((2, 2))))
    with pytest.raises(ValueError):
        prune_patches(seq, _ratios(np.ones((2, 2))), _ratios(np.ones((3, 3))))


def test_prune_does_not_pool():
    COUNTERS.reset()
    seq = _seq(np.random.default_rng(3), 16, 4)
    prune_patches(seq, _ratios(np.ones((4, 4))), _ratios(np.zeros((4, 4))))
    assert COUNTERS.pool_calls == 0


def test_depth_zero_is_identity_on_class_token():
    rng = np.random.default_rng(4)
    cfg = NeckConfig(depth=0, heads=2, dim=8)
    seq = _seq(rng, 5, 8)
    out = neck_forward(seq, init_neck(cfg, rng), cfg)
    assert np.array_equal(out.data, seq.class_token.data)


def test_forward_matches_straightline_reference():
    # rebuild the whole 2-block pre-norm stack with plain numpy
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cfg = NeckConfig(depth=2, heads=2, dim=8, mlp_ratio=2)
        params = init_neck(cfg, rng)
        seq = _seq(rng, 6, 8)
        out = neck_forward(seq, params, cfg)

        x = np.concatenate([seq.class_token.data[None],
                            seq.location_token.data[None],
                            seq.patch_tokens.data], axis=0)
        for blk in params.blocks:
            h = np_layernorm(x, blk.ln1_g.data, blk.ln1_b.data)
            x = x + attention_reference(
                h, blk.wq.data, blk.bq.data, blk.wk.data,
                np.zeros(cfg.dim), blk.wv.data, blk.bv.data,
                blk.wo.data, blk.bo.data, cfg.heads)
            h2 = np_layernorm(x, blk.ln2_g.data, blk.ln2_b.data)
            x = x + mlp2_reference(h2, blk.w1.data, blk.b1.data,
                                   blk.w2.data, blk.b2.data)
        assert np.allclose(out.data, x[0], atol=1e-12)


def test_patch_permutation_invariance():
    # self-attention has no positional order; permuting patch rows must not
    # change the class-token output (positions were added upstream)
    rng = np.random.default_rng(6)
    cfg = NeckConfig(depth=2, heads=2, dim=8, mlp_ratio=2)
    params = init_neck(cfg, rng)
    seq = _seq(rng, 7, 8)
    out1 = neck_forward(seq, params, cfg)
    perm = rng.permutation(7)
    seq2 = TokenSequence(Tensor(seq.class_token.data),
                         Tensor(seq.location_token.data),
                         Tensor(seq.patch_tokens.data[perm]),
                         seq.keep_map[perm])
    out2 = neck_forward(seq2, params, cfg)
    assert np.allclose(out1.data, out2.data, atol=1e-12)


def test_non_finite_input_rejected():
    rng = np.random.default_rng(7)
    cfg = NeckConfig(depth=1, heads=2, dim=4)
    seq = _seq(rng, 3, 4)
    seq.patch_tokens.data[1, 2] = np.nan
    with pytest.raises(ValueError):
        neck_forward(seq, init_neck(cfg, rng), cfg)


def test_neck_gradients_against_fd():
    rng = np.random.default_rng(8)
    cfg = NeckConfig(depth=1, heads=2, dim=6, mlp_ratio=2)
    params = init_neck(cfg, rng)
    seq = _seq(rng, 4, 6)
    w = rng.normal(size=6)
    (neck_forward(seq, params, cfg) * Tensor(w)).sum().backward()

    named = params.named()
    check = ["neck.block0.wq", "neck.block0.wo", "neck.block0.ln1_g",
             "neck.block0.w1", "neck.block0.b2"]

    def loss():
        fresh = init_neck(cfg, np.random.default_rng(0))
        for name, t in params.named().items():
            dict(fresh.named())[name].data[...] = t.data
        s = TokenSequence(Tensor(seq.class_token.data),
                          Tensor(seq.location_token.data),
                          Tensor(seq.patch_tokens.data), seq.keep_map)
        return float((neck_forward(s, fresh, cfg).data * w).sum())

    for name in check:
        t = named[name]
        fd = finite_diff(loss, t.data, eps=1e-6)
        assert rel_error(t.grad, fd) < 1e-6, name
    fd = finite_diff(loss, seq.class_token.data, eps=1e-6)
    assert rel_error(seq.class_token.grad, fd) < 1e-6


def test_attn_macs_counter():
    rng = np.random.default_rng(9)
    cfg = NeckConfig(depth=3, heads=2, dim=8, mlp_ratio=2)
    params = init_neck(cfg, rng)
    seq = _seq(rng, 5, 8)
    COUNTERS.reset()
    neck_forward(seq, params, cfg)
    L = 5 + 2
    assert COUNTERS.attn_macs == 3 * 2 * L * L * 8


def test_flop_formula_exact():
    cfg = NeckConfig(depth=4, heads=6, dim=384, mlp_ratio=4)
    terms = flop_terms(10, cfg)
    L, d = 12, 384
    assert terms["attn_proj"] == 2 * 4 * 4 * L * d * d
    assert terms["attn_mix"] == 2 * 4 * 2 * L * L * d
    assert terms["mlp"] == 2 * 4 * 2 * L * d * 4 * d
    assert flop_estimate(10, cfg) == sum(terms.values())


def test_flops_strictly_decrease_with_pruning():
    cfg = NeckConfig()
    vals = [flop_estimate(p, cfg) for p in range(65)]
    assert all(vals[i] < vals[i + 1] for i in range(64))
