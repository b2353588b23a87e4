"""Training loop: frozen backbone, everything after it learns.

One optimizer step per scene. Every ground-truth pair contributes a
two-pass loss (original and swapped mask ordering, four BCE terms plus the
weighted consistency term); roughly one negative pair is sampled for every
five ground-truth relations. Per-epoch loss components, learning rate and
train-set mR@50 go to a JSON-lines log.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor
from ..bidir_head import training_losses
from ..mask_embed import ratios_pooled
from ..model import PairOptions, RelationModel
from ..optim import AdamW, LrSchedule, clip_grad_norm, lr_at
from .dataio import Dataset, append_jsonl


@dataclass
class TrainConfig:
    epochs: int = 62           # 1984 steps on the 32-scene reference set
    lr: float = 2e-3
    weight_decay: float = 0.02
    neg_ratio: int = 5          # one sampled negative per this many GT relations
    lambda_cons: float = 1.0
    tome_ratio: float = 0.0
    prune: bool = True
    clip: float = 1.0
    min_lr: float = 0.0
    warmup_frac: float = 0.05
    seed: int = 0
    eval_every: int = 1
    eval_k: int = 50
    target_mr: float | None = None   # stop early once train mR@eval_k reaches this
    # consistency-weight schedule: zero for the first delay fraction of
    # training, then a linear ramp up to lambda_cons over the next ramp
    # fraction. The classification loss must settle the predicate directions
    # first; weighting the symmetry term from step 0 lets the trivial
    # direction-blind solution win instead.
    cons_delay_frac: float = 0.4
    cons_ramp_frac: float = 0.2


def cons_weight(tcfg: TrainConfig, step: int, total_steps: int) -> float:
    u = step / max(1, total_steps)
    if u < tcfg.cons_delay_frac:
        return 0.0
    if tcfg.cons_ramp_frac <= 0.0:
        return tcfg.lambda_cons
    ramp = (u - tcfg.cons_delay_frac) / tcfg.cons_ramp_frac
    return tcfg.lambda_cons * min(1.0, ramp)


def _pair_targets(relations, i: int, j: int, n_predicates: int):
    y_fwd = np.zeros(n_predicates)
    y_bwd = np.zeros(n_predicates)
    for s, o, p in relations:
        if (s, o) == (i, j):
            y_fwd[p] = 1.0
        elif (s, o) == (j, i):
            y_bwd[p] = 1.0
    return y_fwd, y_bwd


def train_model(model: RelationModel, dataset: Dataset, tcfg: TrainConfig,
                log_path: str | None = None, quiet: bool = False) -> dict:
    n_pred = model.config.n_predicates
    if n_pred != dataset.n_predicates:
        raise ValueError("model and dataset disagree on the predicate vocabulary")
    rng = np.random.default_rng(tcfg.seed)
    scenes = dataset.scenes
    grid = (model.config.grid, model.config.grid)

    # everything per-scene that never changes across steps
    prepared = []
    for sc in scenes:
        masks = sc.masks
        stack = model.encode_image(sc.pixels, tcfg.tome_ratio)
        ratios = ratios_pooled(masks, grid)
        rels = sc.relations
        n = len(masks)
        pos_pairs = sorted({(min(s, o), max(s, o)) for s, o, _ in rels})
        related = set(pos_pairs)
        neg_cands = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if (i, j) not in related]
        prepared.append((stack, ratios, rels, pos_pairs, neg_cands))

    total_steps = max(1, tcfg.epochs * len(scenes))
    schedule = LrSchedule(tcfg.lr, tcfg.min_lr,
                          min(int(tcfg.warmup_frac * total_steps),
                              total_steps - 1),
                          total_steps)
    opt = AdamW(model.trainable_params(), lr=tcfg.lr,
                weight_decay=tcfg.weight_decay)

    history = {"epochs": [], "step0_consistency": None, "negatives": 0,
               "positives": 0}
    step = 0
    frozen_before = model.encoder_checksum()
    t_start = time.perf_counter()
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(scenes))
        ep_loss = ep_bce = ep_cons = 0.0
        ep_pairs = 0
        for si in order:
            stack, ratios, rels, pos_pairs, neg_cands = prepared[si]
            n_neg = math.ceil(len(rels) / tcfg.neg_ratio) if rels else 0
            n_neg = min(n_neg, len(neg_cands))
            negs = []
            if n_neg:
                picked = rng.choice(len(neg_cands), size=n_neg, replace=False)
                negs = [neg_cands[int(x)] for x in picked]
            batch = [(i, j, False) for i, j in pos_pairs] \
                + [(i, j, True) for i, j in negs]
            if not batch:
                continue
            history["negatives"] += len(negs)
            history["positives"] += len(rels)

            patches = model.repatch_stack(stack)
            losses = []
            bce_v = cons_v = 0.0
            lam = cons_weight(tcfg, step, total_steps)
            for i, j, _neg in batch:
                y_fwd, y_bwd = _pair_targets(rels, i, j, n_pred)
                x = model.pair_feature(patches, ratios[i], ratios[j], tcfg.prune)
                x_sw = model.pair_feature(patches, ratios[j], ratios[i], tcfg.prune)
                bce, cons, combined = training_losses(
                    x, x_sw, y_fwd, y_bwd, model.gate, model.relhead, lam)
                losses.append(combined)
                bce_v += bce.item()
                cons_v += cons.item()
                if history["step0_consistency"] is None:
                    history["step0_consistency"] = cons.item()
            total = losses[0]
            for ls in losses[1:]:
                total = total + ls
            total = total * Tensor(1.0 / len(losses))
            loss_v = total.item()
            if not np.isfinite(loss_v):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"loss={loss_v} bce={bce_v} cons={cons_v}")
            total.backward()
            clip_grad_norm(opt.params, tcfg.clip)
            opt.lr = lr_at(schedule, step)
            opt.step()
            opt.zero_grad()
            step += 1
            ep_loss += loss_v * len(batch)
            ep_bce += bce_v
            ep_cons += cons_v
            ep_pairs += len(batch)

        entry = {
            "epoch": epoch,
            "step": step,
            "loss": ep_loss / max(1, ep_pairs),
            "bce": ep_bce / max(1, ep_pairs),
            "consistency": ep_cons / max(1, ep_pairs),
            "lr": opt.lr,
        }
        if tcfg.eval_every and ((epoch + 1) % tcfg.eval_every == 0
                                or epoch == tcfg.epochs - 1):
            entry[f"train_mR@{tcfg.eval_k}"] = train_mean_recall(
                model, dataset, k=tcfg.eval_k, prune=tcfg.prune)
        history["epochs"].append(entry)
        if log_path:
            append_jsonl(log_path, entry)
        if not quiet:
            extra = {k: v for k, v in entry.items() if k.startswith("train_mR")}
            print(f"epoch {epoch:3d} loss {entry['loss']:.4f} "
                  f"bce {entry['bce']:.4f} cons {entry['consistency']:.5f} "
                  + " ".join(f"{k} {v:.2f}" for k, v in extra.items()))
        if tcfg.target_mr is not None \
                and entry.get(f"train_mR@{tcfg.eval_k}", -1.0) >= tcfg.target_mr:
            break

    if model.encoder_checksum() != frozen_before:
        raise RuntimeError("frozen encoder drifted during training")
    history["steps"] = step
    history["wall_s"] = time.perf_counter() - t_start
    if history["epochs"]:
        history["final_consistency"] = history["epochs"][-1]["consistency"]
    return history


def train_mean_recall(model: RelationModel, dataset: Dataset, k: int = 50,
                      prune: bool = True, swap_order: bool = False) -> float:
    """mR@k on the training scenes under the PredCls protocol (GT instances)."""
    from ..sgeval import (ImageEval, PredTriplet, dedup_singlempo,
                          identity_match, mean_recall_at_k)
    images = []
    opts = PairOptions(prune=prune)
    for sc in dataset.scenes:
        masks = sc.masks
        ratios = model.mask_ratios(masks)
        preds = model.predict_scene(sc.pixels, ratios, opts, swap_order=swap_order)
        match = identity_match(len(masks))
        triplets = []
        for a, b, scores in preds:
            for p, sc_v in enumerate(scores):
                triplets.append(PredTriplet(a, b, p, float(sc_v)))
        images.append(ImageEval(dedup_singlempo(triplets, match), match,
                                sc.graph()))
    return mean_recall_at_k(images, k, model.config.n_predicates)
