"""Latency / throughput micro-benchmark.

Measures single-image forward latency at batch size 1 (warmup passes run
first and are excluded from every statistic) and pair throughput on a
cycled batch of subject-object pairs. Deterministic operation counters are
reported alongside wall-clock numbers so relative claims (pass halving,
FLOP reduction, upsample-free low-res path) do not depend on the machine.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from ..autodiff import no_grad
from ..backbone import encoder_flops, masks_to_logits
from ..bidir_head import predict_forward_only
from ..counters import COUNTERS
from ..model import PairOptions, RelationModel

DEFAULT_WARMUP = 200
DEFAULT_PASSES = 1000
DEFAULT_RPS_PAIRS = 64


def time_passes(fn, warmup: int = DEFAULT_WARMUP,
                passes: int = DEFAULT_PASSES) -> dict:
    """Run `fn` warmup+passes times; statistics cover only the measured tail.

    Returns mean/median/p95 in milliseconds from a monotonic clock. Fewer
    than 10 measured passes is an error: percentiles from a handful of
    samples are noise dressed up as numbers.
    """
    if passes < 10:
        raise ValueError("need at least 10 measured passes for statistics")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    for _ in range(warmup):
        fn()
    times = np.empty(passes)
    for i in range(passes):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    ms = times * 1000.0
    return {
        "warmup": warmup,
        "passes": passes,
        "mean_ms": float(ms.mean()),
        "median_ms": float(np.percentile(ms, 50)),
        "p95_ms": float(np.percentile(ms, 95)),
    }


def _per_pass(total: int, n_passes: int, what: str) -> int:
    if total % n_passes:
        raise AssertionError(f"{what} not constant across passes")
    return total // n_passes


@dataclass
class BenchReport:
    rows: list[dict]

    def to_json(self) -> list[dict]:
        return self.rows


def run_bench(model: RelationModel, pixels: np.ndarray,
              mask_logits: np.ndarray, options: PairOptions | None = None,
              lowres: bool = True, warmup: int = DEFAULT_WARMUP,
              passes: int = DEFAULT_PASSES,
              rps_pairs: int = DEFAULT_RPS_PAIRS, label: str = "") -> dict:
    """One benchmark configuration -> one report row.

    The timed unit is the full forward: mask logits -> overlap ratios
    (pooled low-res or the upsample-then-pool reference) -> comprehensive
    relation graph. Pair throughput is measured separately on a cycled
    batch of `rps_pairs` ordered pairs against precomputed scene features.
    """
    options = options or PairOptions()
    n = mask_logits.shape[0]
    if n < 2:
        raise ValueError("need at least two instances to benchmark pairs")

    def one_pass():
        ratios = model.logit_ratios(mask_logits, lowres)
        model.predict_scene(pixels, ratios, options)

    for _ in range(warmup):
        one_pass()
    before = COUNTERS.snapshot()
    stats = time_passes(one_pass, 0, passes)
    stats["warmup"] = warmup
    after = COUNTERS.snapshot()

    head_passes = _per_pass(after["head_passes"] - before["head_passes"],
                            passes, "head passes")
    upsamples = _per_pass(after["upsample_calls"] - before["upsample_calls"],
                          passes, "upsample calls")
    pools = _per_pass(after["pool_calls"] - before["pool_calls"],
                      passes, "pool calls")
    neck_flops = _per_pass(after["neck_flops"] - before["neck_flops"],
                           passes, "neck flops")
    flops = encoder_flops(model.config.encoder, options.tome_ratio) + neck_flops

    # pair throughput: batched pair processing over frozen scene features
    with no_grad():
        ratios = model.logit_ratios(mask_logits, lowres)
        patches = model.scene_features(pixels, options.tome_ratio)
        unordered = [(i, j) for i in range(n) for j in range(i + 1, n)]
        cyc = itertools.cycle(unordered)
        done = 0
        t0 = time.perf_counter()
        while done < rps_pairs:
            i, j = next(cyc)
            if options.bidirectional:
                model.predict_pair(patches, ratios[i], ratios[j], options.prune)
                done += 2
            else:
                x = model.pair_feature(patches, ratios[i], ratios[j],
                                       options.prune)
                predict_forward_only(x, model.gate, model.relhead)
                done += 1
        elapsed = time.perf_counter() - t0
    rps = done / elapsed if elapsed > 0 else float("inf")

    row = {
        "label": label or ("lowres" if lowres else "upsampled"),
        "batch": 1,
        "lowres": lowres,
        "prune": options.prune,
        "tome_ratio": options.tome_ratio,
        "bidirectional": options.bidirectional,
        "n_instances": n,
        "rps_pairs": done,
        "rps": rps,
        "head_passes": head_passes,
        "upsample_calls": upsamples,
        "pool_calls": pools,
        "flops": int(flops),
        "neck_flops": int(neck_flops),
    }
    row.update(stats)
    return row


def scene_logits(masks, stride: int) -> np.ndarray:
    return masks_to_logits(masks, stride)


_KERNEL_CASES = ("pool", "resize", "rle")


def bench_kernels(hw: int = 256, warmup: int = 5, passes: int = 50,
                  seed: int = 0) -> list[dict]:
    """Time the numpy and numba kernel implementations on identical inputs."""
    from ..kernels import NUMBA_AVAILABLE, numba_impl, numpy_impl

    rng = np.random.default_rng(seed)
    mask_f = (rng.random((hw, hw)) < 0.3).astype(np.float64)
    flat_u8 = mask_f.astype(np.uint8).ravel()
    small = rng.random((hw // 4, hw // 4))

    impls = [("numpy", numpy_impl)]
    if NUMBA_AVAILABLE:
        impls.append(("numba", numba_impl))

    rows = []
    for name, impl in impls:
        cases = {
            "pool": lambda: impl.pool_windows(mask_f, 16, 16),
            "resize": lambda: impl.bilinear_resize(small, hw, hw),
            "rle": lambda: impl.rle_decode(impl.rle_encode(flat_u8),
                                           flat_u8.size),
        }
        for case in _KERNEL_CASES:
            stats = time_passes(cases[case], warmup, passes)
            rows.append({"impl": name, "kernel": case, "hw": hw, **stats})
    return rows
