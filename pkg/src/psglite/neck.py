"""Relation neck: mask-gated patch pruning plus a pre-norm transformer.

The sequence fed to the blocks is [class token, location token, patch
tokens]; only the class token's final state leaves the neck. Patches whose
subject AND object overlap ratios are both exactly zero carry no pair
information and are dropped before the blocks, reusing the ratios that the
embedding step already computed (pruning itself performs no pooling, which
the pool-call counter asserts). There is no trailing layernorm, so a
depth-0 neck is the identity on the class token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, concat, layernorm, matmul, gelu, reshape,
                       softmax, take_rows, transpose)
from .counters import COUNTERS
from .mask_embed import OverlapRatios


@dataclass
class NeckConfig:
    depth: int = 4
    heads: int = 6
    dim: int = 384
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")


@dataclass
class TokenSequence:
    class_token: Tensor          # (D,)
    location_token: Tensor       # (D,)
    patch_tokens: Tensor         # (P', D)
    keep_map: np.ndarray         # original patch index of each surviving row


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor                   # keys carry no bias: softmax drops any
    wv: Tensor                   # per-query constant, so one could never train
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class NeckParams:
    blocks: list = field(default_factory=list)

    def named(self, prefix: str = "neck") -> dict[str, Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks):
            for name in blk.__dataclass_fields__:
                out[f"{prefix}.block{i}.{name}"] = getattr(blk, name)
        return out


def init_neck(config: NeckConfig, rng: np.random.Generator) -> NeckParams:
    d = config.dim
    hidden = config.mlp_ratio * d
    blocks = []
    for _ in range(config.depth):
        def w(fan_in, shape):
            return Tensor(rng.normal(0.0, fan_in ** -0.5, size=shape),
                          requires_grad=True)
        blocks.append(BlockParams(
            ln1_g=Tensor(np.ones(d), requires_grad=True),
            ln1_b=Tensor(np.zeros(d), requires_grad=True),
            wq=w(d, (d, d)), bq=Tensor(np.zeros(d), requires_grad=True),
            wk=w(d, (d, d)),
            wv=w(d, (d, d)), bv=Tensor(np.zeros(d), requires_grad=True),
            wo=w(d, (d, d)), bo=Tensor(np.zeros(d), requires_grad=True),
            ln2_g=Tensor(np.ones(d), requires_grad=True),
            ln2_b=Tensor(np.zeros(d), requires_grad=True),
            w1=w(d, (d, hidden)), b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=w(hidden, (hidden, d)), b2=Tensor(np.zeros(d), requires_grad=True),
        ))
    return NeckParams(blocks)


def prune_patches(tokens: TokenSequence, r_s: OverlapRatios,
                  r_o: OverlapRatios) -> TokenSequence:
    """Keep patches with any subject or object overlap; drop the rest.

    Ratio tensors cover the full patch grid; survivors are selected strictly
    by value > 0. Class and location tokens are untouched.
    """
    rs = r_s.flat
    ro = r_o.flat
    if rs.shape[0] != ro.shape[0]:
        raise ValueError("ratio grids disagree")
    full = (rs > 0.0) | (ro > 0.0)
    if tokens.keep_map.size and tokens.keep_map.max() >= rs.shape[0]:
        raise ValueError("ratios do not cover the patch grid")
    local = np.flatnonzero(full[tokens.keep_map])
    return TokenSequence(
        class_token=tokens.class_token,
        location_token=tokens.location_token,
        patch_tokens=take_rows(tokens.patch_tokens, local),
        keep_map=tokens.keep_map[local],
    )


def _attention(x: Tensor, blk: BlockParams, config: NeckConfig) -> Tensor:
    L = x.shape[0]
    d = config.dim
    h = config.heads
    dh = d // h
    q = matmul(x, blk.wq) + blk.bq
    k = matmul(x, blk.wk)
    v = matmul(x, blk.wv) + blk.bv
    q = transpose(reshape(q, (L, h, dh)), (1, 0, 2))
    k = transpose(reshape(k, (L, h, dh)), (1, 0, 2))
    v = transpose(reshape(v, (L, h, dh)), (1, 0, 2))
    scores = matmul(q, transpose(k, (0, 2, 1))) * (dh ** -0.5)
    COUNTERS.attn_macs += 2 * L * L * d
    attn = softmax(scores, axis=-1)
    mixed = matmul(attn, v)
    mixed = reshape(transpose(mixed, (1, 0, 2)), (L, d))
    return matmul(mixed, blk.wo) + blk.bo


def neck_forward(tokens: TokenSequence, params: NeckParams,
                 config: NeckConfig) -> Tensor:
    """Run the blocks over [class, location, patches]; return the class state."""
    seq = concat([
        reshape(tokens.class_token, (1, config.dim)),
        reshape(tokens.location_token, (1, config.dim)),
        tokens.patch_tokens,
    ], axis=0)
    if not np.all(np.isfinite(seq.data)):
        raise ValueError("non-finite values entering the neck")
    x = seq
    for blk in params.blocks:
        x = x + _attention(layernorm(x, blk.ln1_g, blk.ln1_b), blk, config)
        hbody = gelu(matmul(layernorm(x, blk.ln2_g, blk.ln2_b), blk.w1) + blk.b1)
        x = x + (matmul(hbody, blk.w2) + blk.b2)
    return reshape(take_rows(x, np.array([0])), (config.dim,))


def flop_terms(seq_len: int, config: NeckConfig) -> dict[str, int]:
    """Per-component FLOP counts for one forward pass at `seq_len` patches.

    L = seq_len + 2 (class and location tokens ride along). Per block:
      attn_proj: q, k, v, out projections       -> 4 * L * D^2 MACs
      attn_mix:  scores and value mixing        -> 2 * L^2 * D MACs
      mlp:       two dense layers of ratio r    -> 2 * L * D * (r*D) MACs
    FLOPs = 2 * MACs (multiply + add), summed over depth. Layernorm/softmax
    element ops are excluded, matching what the MAC counter measures.
    """
    L = seq_len + 2
    d = config.dim
    attn_proj = 4 * L * d * d
    attn_mix = 2 * L * L * d
    mlp = 2 * L * d * (config.mlp_ratio * d)
    return {
        "attn_proj": 2 * config.depth * attn_proj,
        "attn_mix": 2 * config.depth * attn_mix,
        "mlp": 2 * config.depth * mlp,
    }


def flop_estimate(seq_len: int, config: NeckConfig) -> int:
    return sum(flop_terms(seq_len, config).values())
