"""Independent reference implementations used to check the real code.

Everything here is written straight-line against numpy, on purpose: no
imports from the package internals beyond plain data containers, so a bug
in the library cannot hide inside its own oracle.
"""

import numpy as np


def finite_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a.ravel()))
    nb = float(np.linalg.norm(b.ravel()))
    denom = max(na, nb, 1e-30)
    return float(np.linalg.norm((a - b).ravel())) / denom


def np_sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def np_gelu(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def np_layernorm(x, gamma, beta, eps=1e-12):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def np_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pool_reference(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Loop-based window averaging, the slowest possible way."""
    h, w = x.shape
    kh, kw = h // out_h, w // out_w
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = x[i * kh:(i + 1) * kh, j * kw:(j + 1) * kw].mean()
    return out


def mlp2_reference(x, w1, b1, w2, b2):
    """Two-layer GELU MLP on rows of x."""
    return np_gelu(x @ w1 + b1) @ w2 + b2


def attention_reference(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Single straight-line multi-head self-attention block."""
    L, d = x.shape
    dh = d // heads
    q = (x @ wq + bq).reshape(L, heads, dh).transpose(1, 0, 2)
    k = (x @ wk + bk).reshape(L, heads, dh).transpose(1, 0, 2)
    v = (x @ wv + bv).reshape(L, heads, dh).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    mix = np_softmax(scores, axis=-1) @ v
    return mix.transpose(1, 0, 2).reshape(L, d) @ wo + bo


def tome_plan_reference(feats: np.ndarray, ratio: float, protected=()):
    """Brute-force bipartite merge matching for small token counts.

    Returns (src_indices, dst_indices) sorted by source index, picking for
    every merged source its single best destination by cosine similarity
    (first max wins), and merging the r*|A| most similar sources.
    """
    n = feats.shape[0]
    prot = set(protected)
    a_idx = [i for i in range(0, n, 2) if i not in prot]
    b_idx = [i for i in range(1, n, 2) if i not in prot]
    m = int(ratio * len(a_idx))
    if not b_idx:
        m = 0
    if m == 0:
        return [], []
    norm = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    best = []
    for ai in a_idx:
        sims = [norm[ai] @ norm[bi] for bi in b_idx]
        j = int(np.argmax(sims))
        best.append((ai, b_idx[j], sims[j]))
    best.sort(key=lambda t: (-t[2], t[0]))
    chosen = sorted(best[:m], key=lambda t: t[0])
    return [t[0] for t in chosen], [t[1] for t in chosen]


def recall_reference(gt_relations, ranked_triplets, mapping, k):
    """Hit count for one image: top-k ranked triplets against GT triples.

    mapping: predicted instance index -> GT instance index (None = unmatched).
    Returns (hits, total_gt).
    """
    gt = set(gt_relations)
    hit = set()
    for t in ranked_triplets[:k]:
        gs = mapping.get(t.subject)
        go = mapping.get(t.object)
        if gs is None or go is None:
            continue
        if (gs, go, t.predicate) in gt:
            hit.add((gs, go, t.predicate))
    return len(hit), len(gt)
