"""Scene-graph data model and the corrected recall evaluation.

The failure this module guards against: a segmenter that emits several
near-identical masks for one object gives a relation model several scored
attempts at the same ground-truth subject-object pair, and a ranking metric
that counts every attempt rewards the duplication. The protocol here
removes that inflation in two steps:

  1. match_instances maps predictions onto ground truth greedily by mask
     IoU within the same class; surplus predictions overlapping an already
     matched instance are merged into the existing match (their relations
     re-point to it) instead of counting as fresh instances,
  2. dedup_singlempo keeps, for every matched ground-truth (subject,
     object) ordered pair, only the single highest-scored triplet, so each
     pair gets exactly one attempt in the ranking.

Recall metrics: R@k averages per-image recall over images; mR@k computes
each predicate class's recall over all images and averages the classes
unweighted; mr_inf is the ceiling any predicate classifier could reach
given the matching (both endpoints of a relation matched with the right
labels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mask_embed import BinaryMask


@dataclass
class GTSceneGraph:
    instances: list  # of (BinaryMask, class_label) or BinaryMask carrying its label
    relations: list[tuple[int, int, int]]  # (subject_idx, object_idx, predicate_idx)

    def __post_init__(self):
        n = len(self.instances)
        seen = set()
        for s, o, p in self.relations:
            if not (0 <= s < n and 0 <= o < n):
                raise ValueError("relation index out of range")
            if (s, o, p) in seen:
                raise ValueError("duplicate ground-truth triplet")
            seen.add((s, o, p))

    def mask(self, i: int) -> BinaryMask:
        inst = self.instances[i]
        return inst[0] if isinstance(inst, tuple) else inst

    def label(self, i: int) -> int:
        inst = self.instances[i]
        return inst[1] if isinstance(inst, tuple) else inst.class_label


@dataclass
class PredTriplet:
    subject: int        # index into the predicted instance list
    object: int
    predicate: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("triplet score must be finite")
        if self.subject == self.object:
            raise ValueError("subject and object must be different instances")


@dataclass
class MatchResult:
    pred_to_gt: dict[int, int]          # every matched prediction, aliases included
    iou: dict[int, float]
    primary: dict[int, int] = field(default_factory=dict)  # gt -> its primary prediction

    def gt_of(self, pred_idx: int):
        return self.pred_to_gt.get(pred_idx)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ValueError("masks must share image dims")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        raise ValueError("IoU of two empty masks is undefined")
    return inter / union


def match_instances(pred: list[BinaryMask], gt: list[BinaryMask],
                    iou_thresh: float = 0.5) -> MatchResult:
    """Greedy same-class matching by descending IoU, then surplus merging.

    First pass builds an injective map (each GT instance claims at most one
    primary prediction). Second pass folds every remaining prediction that
    still clears the threshold against an already-matched GT instance into
    that match, so duplicates stop being independent attempt sources.
    """
    cand = []
    for pi, pm in enumerate(pred):
        for gi, gm in enumerate(gt):
            if pm.class_label != gm.class_label:
                continue
            v = mask_iou(pm, gm)
            if v >= iou_thresh:
                cand.append((v, pi, gi))
    cand.sort(key=lambda t: (-t[0], t[1], t[2]))

    pred_to_gt: dict[int, int] = {}
    iou: dict[int, float] = {}
    primary: dict[int, int] = {}
    for v, pi, gi in cand:
        if pi in pred_to_gt or gi in primary:
            continue
        pred_to_gt[pi] = gi
        iou[pi] = v
        primary[gi] = pi
    for v, pi, gi in cand:
        if pi in pred_to_gt or gi not in primary:
            continue
        pred_to_gt[pi] = gi   # surplus duplicate, merged into the match
        iou[pi] = v
    return MatchResult(pred_to_gt, iou, primary)


def _ranked(triplets: list[PredTriplet]) -> list[PredTriplet]:
    return sorted(triplets,
                  key=lambda t: (-t.score, t.predicate, t.subject, t.object))


def dedup_singlempo(triplets: list[PredTriplet], match: MatchResult) -> list[PredTriplet]:
    """One attempt per matched ground-truth (subject, object) ordered pair.

    Triplets whose subject or object is unmatched pass through untouched
    (they can never hit ground truth, only occupy ranking slots). Idempotent
    by construction; at any rank cutoff deep enough to avoid truncation it
    can only remove hits, never add them.
    """
    best: dict[tuple[int, int], PredTriplet] = {}
    passthrough: list[PredTriplet] = []
    for t in _ranked(triplets):
        gs = match.gt_of(t.subject)
        go = match.gt_of(t.object)
        if gs is None or go is None:
            passthrough.append(t)
            continue
        best.setdefault((gs, go), t)   # ranked order: first seen is the keeper
    return _ranked(list(best.values()) + passthrough)


@dataclass
class ImageEval:
    triplets: list[PredTriplet]
    match: MatchResult
    gt: GTSceneGraph


def _hits_topk(image: ImageEval, k: int) -> set[tuple[int, int, int]]:
    if k <= 0:
        raise ValueError("k must be positive")
    gt_set = set(image.gt.relations)
    hits = set()
    for t in _ranked(image.triplets)[:k]:
        gs = image.match.gt_of(t.subject)
        go = image.match.gt_of(t.object)
        if gs is None or go is None:
            continue
        if (gs, go, t.predicate) in gt_set:
            hits.add((gs, go, t.predicate))
    return hits


def recall_at_k(images: list[ImageEval], k: int) -> float:
    """Mean over images of (GT triplets recovered in top-k) / (GT triplets)."""
    vals = []
    for im in images:
        if not im.gt.relations:
            continue
        vals.append(100.0 * len(_hits_topk(im, k)) / len(im.gt.relations))
    return float(np.mean(vals)) if vals else 0.0


def per_class_recall(images: list[ImageEval], k: int,
                     n_predicates: int) -> np.ndarray:
    """Per-predicate recall pooled over all images; NaN for absent classes."""
    gt_count = np.zeros(n_predicates)
    hit_count = np.zeros(n_predicates)
    for im in images:
        for s, o, p in im.gt.relations:
            gt_count[p] += 1
        for gs, go, p in _hits_topk(im, k):
            hit_count[p] += 1
    out = np.full(n_predicates, np.nan)
    present = gt_count > 0
    out[present] = 100.0 * hit_count[present] / gt_count[present]
    return out


def mean_recall_at_k(images: list[ImageEval], k: int, n_predicates: int) -> float:
    """Unweighted mean of per-predicate recalls over classes present in GT."""
    per = per_class_recall(images, k, n_predicates)
    present = ~np.isnan(per)
    return float(per[present].mean()) if present.any() else 0.0


def inf_per_class(images: list[ImageEval], n_predicates: int) -> np.ndarray:
    """Per-predicate endpoint coverage: recall a perfect classifier would get."""
    gt_count = np.zeros(n_predicates)
    cover_count = np.zeros(n_predicates)
    for im in images:
        matched_gt = set(im.match.primary.keys())
        for s, o, p in im.gt.relations:
            gt_count[p] += 1
            if s in matched_gt and o in matched_gt:
                cover_count[p] += 1
    out = np.full(n_predicates, np.nan)
    present = gt_count > 0
    out[present] = 100.0 * cover_count[present] / gt_count[present]
    return out


def mr_inf(images: list[ImageEval], n_predicates: int) -> float:
    """Best possible mR@k for a perfect predicate classifier on these masks."""
    per = inf_per_class(images, n_predicates)
    present = ~np.isnan(per)
    return float(per[present].mean()) if present.any() else 0.0


def identity_match(n: int) -> MatchResult:
    """Predictions are the GT instances themselves (the PredCls protocol)."""
    idx = {i: i for i in range(n)}
    return MatchResult(dict(idx), {i: 1.0 for i in range(n)}, dict(idx))
