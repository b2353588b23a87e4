"""Bipartite token merging around an attention call, with exact unmerge.

Tokens at even indices form the source set A, odd indices the destination
set B (protected indices belong to neither). Each A token is scored by its
best cosine similarity into B; the floor(ratio * |A|) most redundant A
tokens are averaged into their matches before attention and copied back out
to every original position afterwards, so the wrapped attention preserves
token count for any ratio.

Everything here operates on plain float64 arrays: merging is only applied
inside the frozen feature encoder, never on the differentiable tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MergePlan:
    n: int                 # original token count
    ratio: float
    src_idx: np.ndarray    # original indices of merged A tokens
    dst_idx: np.ndarray    # for each merged token, its B destination (original index)
    keep_idx: np.ndarray   # surviving original indices, in output order
    group_of: np.ndarray   # original index -> output row

    @property
    def merged_count(self) -> int:
        return int(self.src_idx.size)

    @property
    def out_len(self) -> int:
        return int(self.keep_idx.size)


def build_plan(features: np.ndarray, ratio: float,
               protected: frozenset | set | tuple = ()) -> MergePlan:
    """Soft bipartite matching on cosine similarity.

    `features` are whatever the caller wants similarity measured on (raw
    tokens, or attention keys when available). Ties in similarity resolve to
    the smaller index so plans are deterministic.
    """
    if not (0.0 <= ratio < 1.0):
        raise ValueError("ratio must be in [0, 1)")
    n = features.shape[0]
    prot = set(int(i) for i in protected)
    a_idx = np.array([i for i in range(0, n, 2) if i not in prot], dtype=np.int64)
    b_idx = np.array([i for i in range(1, n, 2) if i not in prot], dtype=np.int64)
    if ratio > 0.0 and a_idx.size == 0 and b_idx.size == 0:
        raise ValueError("every token is protected; nothing can merge")
    m = int(ratio * a_idx.size)
    if m > 0 and b_idx.size == 0:
        m = 0
    if m == 0:
        keep = np.arange(n, dtype=np.int64)
        return MergePlan(n, ratio, np.zeros(0, np.int64), np.zeros(0, np.int64),
                         keep, keep.copy())

    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = features / safe[:, None]
    sim = unit[a_idx] @ unit[b_idx].T            # (|A|, |B|)
    best_col = np.argmax(sim, axis=1)            # argmax takes the first max: low index wins ties
    best_sim = sim[np.arange(a_idx.size), best_col]
    # select the m most similar, ties by original index; report in index order
    order = np.lexsort((a_idx, -best_sim))
    chosen = np.sort(order[:m])
    src = a_idx[chosen]
    dst = b_idx[best_col[chosen]]

    merged_set = set(src.tolist())
    keep = np.array([i for i in range(n) if i not in merged_set], dtype=np.int64)
    group_of = np.full(n, -1, dtype=np.int64)
    group_of[keep] = np.arange(keep.size)
    group_of[src] = group_of[dst]
    return MergePlan(n, ratio, src, dst, keep, group_of)


def merge(tokens: np.ndarray, plan: MergePlan,
          sizes: np.ndarray | None = None) -> np.ndarray:
    """Collapse each group to its (size-weighted) mean; length n -> out_len.

    `sizes` carries how many originals each current token already represents,
    for callers that chain merges without unmerging in between; fresh tokens
    default to size one, making the result a true mean of originals.
    """
    if tokens.shape[0] != plan.n:
        raise ValueError("plan was built for a different token count")
    if plan.merged_count == 0:
        return tokens
    if sizes is None:
        sizes = np.ones(plan.n, dtype=np.float64)
    weighted = tokens * sizes[:, None]
    acc = np.zeros((plan.out_len, tokens.shape[1]), dtype=np.float64)
    cnt = np.zeros(plan.out_len, dtype=np.float64)
    np.add.at(acc, plan.group_of, weighted)
    np.add.at(cnt, plan.group_of, sizes)
    return acc / cnt[:, None]


def merged_sizes(plan: MergePlan, sizes: np.ndarray | None = None) -> np.ndarray:
    if sizes is None:
        sizes = np.ones(plan.n, dtype=np.float64)
    cnt = np.zeros(plan.out_len, dtype=np.float64)
    np.add.at(cnt, plan.group_of, sizes)
    return cnt


def unmerge(tokens: np.ndarray, plan: MergePlan) -> np.ndarray:
    """Expand merged tokens back: every original position gets its group value."""
    if tokens.shape[0] != plan.out_len:
        raise ValueError("token count does not match the plan's merged length")
    if plan.merged_count == 0:
        return tokens
    return tokens[plan.group_of]


def wrapped_attention(tokens: np.ndarray, ratio: float, attn,
                      protected: frozenset | set | tuple = (),
                      sim_features: np.ndarray | None = None) -> np.ndarray:
    """unmerge(attn(merge(tokens))); token count is preserved for any ratio."""
    feats = tokens if sim_features is None else sim_features
    plan = build_plan(feats, ratio, protected)
    if plan.merged_count == 0:
        return attn(tokens)
    return unmerge(attn(merge(tokens, plan)), plan)
