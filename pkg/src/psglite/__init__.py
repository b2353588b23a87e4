"""Desk-scale panoptic scene-graph relation pipeline.

A frozen toy encoder feeds a trainable relation stack: mask-overlap token
embedding, patch pruning, a small pre-norm transformer neck, and a gated
bidirectional predicate head. Evaluation implements mask-matched recall
with single-prediction-per-pair deduplication; the harness adds training,
benchmarking, and dataset plumbing behind one CLI.
"""

from .autodiff import Tensor, no_grad
from .counters import COUNTERS
from .mask_embed import (BinaryMask, MaskEmbedTokens, OverlapRatios,
                         embed_pair, ratios_from_logits, ratios_per_pair,
                         ratios_pooled, ratios_upsampled_reference)
from .model import (ModelConfig, PairOptions, RelationModel, load_checkpoint,
                    save_checkpoint)
from .sgeval import (GTSceneGraph, ImageEval, MatchResult, PredTriplet,
                     dedup_singlempo, identity_match, mask_iou,
                     match_instances, mean_recall_at_k, mr_inf, recall_at_k)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "COUNTERS",
    "BinaryMask", "MaskEmbedTokens", "OverlapRatios", "embed_pair",
    "ratios_from_logits", "ratios_per_pair", "ratios_pooled",
    "ratios_upsampled_reference",
    "ModelConfig", "PairOptions", "RelationModel", "load_checkpoint",
    "save_checkpoint",
    "GTSceneGraph", "ImageEval", "MatchResult", "PredTriplet",
    "dedup_singlempo", "identity_match", "mask_iou", "match_instances",
    "mean_recall_at_k", "mr_inf", "recall_at_k",
    "__version__",
]
