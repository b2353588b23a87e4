"""Scene-graph evaluation driver for both protocols.

predcls scores relations from the ground-truth masks (identity instance
matching). sgdet runs the same scorer on simulated segmenter output: GT
masks perturbed toward a target IoU, matched back to GT by same-class
IoU >= 0.5. Per-image timing covers only the forward passes; ratio
preparation and matching stay outside the clock.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..backbone import PanopticOutput, encoder_flops, simulate_inferred_masks
from ..counters import COUNTERS
from ..model import PairOptions, RelationModel
from ..sgeval import (ImageEval, MatchResult, PredTriplet, dedup_singlempo,
                      identity_match, inf_per_class, match_instances,
                      mean_recall_at_k, mr_inf, per_class_recall, recall_at_k)
from .dataio import Dataset


@dataclass
class EvalReport:
    rows: list[dict]
    per_class: dict[int, np.ndarray]
    inf_per_class: np.ndarray
    gt_counts: np.ndarray
    images: list[ImageEval] = field(repr=False, default_factory=list)
    latency_ms_mean: float = 0.0
    rps: float = 0.0
    head_passes: int = 0
    flops: float = 0.0


def check_vocabulary(model: RelationModel, dataset: Dataset) -> None:
    mv, dv = model.vocab, dataset.vocabulary
    for key in ("thing_classes", "predicate_classes"):
        if list(mv[key]) != list(dv[key]):
            raise ValueError(f"checkpoint and dataset disagree on {key}")


def scene_triplets(preds: list[tuple[int, int, np.ndarray]]) -> list[PredTriplet]:
    out = []
    for a, b, scores in preds:
        for p, s in enumerate(scores):
            out.append(PredTriplet(a, b, p, float(s)))
    return out


def evaluate_model(model: RelationModel, dataset: Dataset,
                   protocol: str = "predcls", ks=(20, 50, 100),
                   mask_jitter: float = 0.0, seed: int = 0,
                   options: PairOptions | None = None,
                   swap_order: bool = False) -> EvalReport:
    if protocol not in ("predcls", "sgdet"):
        raise ValueError(f"unknown protocol {protocol!r}")
    check_vocabulary(model, dataset)
    options = options or PairOptions()
    n_pred = model.config.n_predicates

    passes_before = COUNTERS.head_passes
    neck_before = COUNTERS.extra.get("neck_flops", 0)
    images: list[ImageEval] = []
    total_s = 0.0
    total_pairs = 0
    for idx, sc in enumerate(dataset.scenes):
        gt = sc.graph()
        gt_masks = sc.masks
        if protocol == "predcls":
            inst_masks = gt_masks
            match: MatchResult = identity_match(len(gt_masks))
        else:
            inferred = simulate_inferred_masks(PanopticOutput(gt_masks),
                                               mask_jitter, seed + idx,
                                               model.config.seg_stride)
            inst_masks = inferred.masks
            match = match_instances(inst_masks, gt_masks)
        ratios = model.mask_ratios(inst_masks)

        t0 = time.perf_counter()
        preds = model.predict_scene(sc.pixels, ratios, options, swap_order)
        total_s += time.perf_counter() - t0
        total_pairs += len(preds)

        triplets = dedup_singlempo(scene_triplets(preds), match)
        images.append(ImageEval(triplets, match, gt))

    head_passes = COUNTERS.head_passes - passes_before
    neck_flops = COUNTERS.extra.get("neck_flops", 0) - neck_before
    n_img = max(1, len(images))
    flops = encoder_flops(model.config.encoder, options.tome_ratio) \
        + neck_flops / n_img
    latency_ms = 1000.0 * total_s / n_img
    rps = total_pairs / total_s if total_s > 0 else float("inf")

    mr_unbounded = mr_inf(images, n_pred)
    inf_pc = inf_per_class(images, n_pred)
    gt_counts = np.zeros(n_pred, dtype=np.int64)
    for im in images:
        for _, _, p in im.gt.relations:
            gt_counts[p] += 1

    rows = []
    per_class = {}
    for k in sorted(ks):
        per_class[k] = per_class_recall(images, k, n_pred)
        rows.append({
            "protocol": protocol,
            "k": k,
            "R@k": recall_at_k(images, k),
            "mR@k": mean_recall_at_k(images, k, n_pred),
            "mR@inf": mr_unbounded,
            "latency_ms_mean": latency_ms,
            "rps": rps,
            "head_passes": head_passes,
            "flops": int(flops),
        })
    return EvalReport(rows, per_class, inf_pc, gt_counts, images,
                      latency_ms, rps, head_passes, float(flops))
