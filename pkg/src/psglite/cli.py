"""Command-line entry points.

Subcommands:
  gen-data       deterministic synthetic dataset -> JSON file
  train          fit gate/head/neck/tokens on a dataset (backbone frozen)
  eval           scene-graph metrics under predcls or sgdet
  bench          single-image latency + pair throughput of one configuration
  bench-kernels  numpy vs numba pixel-kernel comparison
  plot           latency-vs-mR@50 scatter from saved metric files

Every run is seeded and single-threaded; repeated invocations with the same
flags produce identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .model import (ModelConfig, PairOptions, RelationModel, load_checkpoint,
                    save_checkpoint)


def _onoff(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def _klist(value: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {value!r}")
    if not ks or any(k <= 0 for k in ks):
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psglite")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic scene dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--instances", type=int, default=4)
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--predicates", type=int, default=6)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--mode", choices=("priority", "skew"), default="priority")
    g.add_argument("--skew", type=str, default=None,
                   help="comma-separated axis weights for skew mode")
    g.add_argument("--p-rel", type=float, default=0.9)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the relation pipeline")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--wd", type=float, default=0.02)
    t.add_argument("--neg-ratio", type=int, default=5)
    t.add_argument("--lambda-cons", type=float, default=1.0)
    t.add_argument("--cons-delay", type=float, default=0.4,
                   help="fraction of training before the consistency weight turns on")
    t.add_argument("--cons-ramp", type=float, default=0.2,
                   help="fraction of training over which it ramps to --lambda-cons")
    t.add_argument("--tome-ratio", type=float, default=0.0)
    t.add_argument("--prune", type=_onoff, default=True, metavar="on/off")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dim", type=int, default=64)
    t.add_argument("--depth", type=int, default=2)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--mlp-ratio", type=int, default=2)
    t.add_argument("--enc-dim", type=int, default=32)
    t.add_argument("--enc-depth", type=int, default=2)
    t.add_argument("--enc-heads", type=int, default=4)
    t.add_argument("--eval-every", type=int, default=1,
                   help="epochs between train-set mR evaluations (0 = never)")
    t.add_argument("--log", default=None, help="JSON-lines metrics log path")
    t.add_argument("--ckpt-out", required=True)
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--protocol", choices=("sgdet", "predcls"),
                   default="predcls")
    e.add_argument("--mask-jitter", type=float, default=0.0)
    e.add_argument("--k", type=_klist, default=(20, 50, 100))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--prune", type=_onoff, default=True, metavar="on/off")
    e.add_argument("--tome-ratio", type=float, default=0.0)
    e.add_argument("--bidir", type=_onoff, default=True, metavar="on/off")
    e.add_argument("--swap-order", action="store_true",
                   help="feed each pair in the reversed ordering")
    e.add_argument("--per-class", default=None,
                   help="also write a per-predicate recall CSV here")
    e.add_argument("--report", default=None,
                   help="metrics file (.csv or .json); stdout if omitted")

    b = sub.add_parser("bench", help="latency / throughput benchmark")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--data", default=None,
                   help="take the bench scene from this dataset")
    b.add_argument("--scene", type=int, default=0)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--warmup", type=int, default=200)
    b.add_argument("--passes", type=int, default=1000)
    b.add_argument("--prune", type=_onoff, default=True, metavar="on/off")
    b.add_argument("--tome-ratio", type=float, default=0.0)
    b.add_argument("--lowres", type=_onoff, default=True, metavar="on/off")
    b.add_argument("--bidir", type=_onoff, default=True, metavar="on/off")
    b.add_argument("--rps-pairs", type=int, default=64)
    b.add_argument("--label", default="")
    b.add_argument("--out", default=None, help="append the row to this JSON file")

    k = sub.add_parser("bench-kernels", help="compare kernel implementations")
    k.add_argument("--hw", type=int, default=256)
    k.add_argument("--warmup", type=int, default=5)
    k.add_argument("--passes", type=int, default=50)
    k.add_argument("--out", default=None)

    p = sub.add_parser("plot", help="latency vs mR@50 scatter (SVG)")
    p.add_argument("--metrics", nargs="+", required=True,
                   help="eval/bench report files (.csv or .json)")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--out", required=True)
    return ap


def cmd_gen_data(args) -> int:
    from .harness import dataio
    skew = None
    if args.skew:
        skew = tuple(float(x) for x in args.skew.split(","))
    doc = dataio.generate_dataset(
        args.seed, args.scenes, args.instances, args.classes,
        args.predicates, args.image_size, args.mode, skew, args.p_rel)
    dataio.save_dataset(args.out, doc)
    print(f"wrote {args.scenes} scenes to {args.out}")
    return 0


def _model_for(args, dataset) -> RelationModel:
    hw = dataset.image_hw
    enc_patch = 8 if hw <= 128 else 16
    enc_grid = hw // enc_patch
    config = ModelConfig(
        image_hw=hw, enc_patch=enc_patch, enc_dim=args.enc_dim,
        enc_depth=args.enc_depth, enc_heads=args.enc_heads,
        enc_taps=tuple(range(args.enc_depth)),
        grid=min(13, enc_grid), dim=args.dim, depth=args.depth,
        heads=args.heads, mlp_ratio=args.mlp_ratio,
        n_predicates=dataset.n_predicates, seed=args.seed)
    return RelationModel(config, vocab=dict(dataset.vocabulary))


def cmd_train(args) -> int:
    from .harness import dataio
    from .harness.train import TrainConfig, train_model
    dataset = dataio.load_dataset(args.data)
    model = _model_for(args, dataset)
    tcfg = TrainConfig(
        epochs=args.epochs, lr=args.lr, weight_decay=args.wd,
        neg_ratio=args.neg_ratio, lambda_cons=args.lambda_cons,
        cons_delay_frac=args.cons_delay, cons_ramp_frac=args.cons_ramp,
        tome_ratio=args.tome_ratio, prune=args.prune, seed=args.seed,
        eval_every=args.eval_every)
    history = train_model(model, dataset, tcfg, log_path=args.log,
                          quiet=args.quiet)
    save_checkpoint(args.ckpt_out, model)
    print(f"saved checkpoint to {args.ckpt_out} "
          f"({history['steps']} steps, {history['wall_s']:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    from .harness import dataio
    from .harness.evaluate import evaluate_model
    dataset = dataio.load_dataset(args.data)
    model = load_checkpoint(args.ckpt)
    options = PairOptions(prune=args.prune, tome_ratio=args.tome_ratio,
                          bidirectional=args.bidir)
    report = evaluate_model(model, dataset, args.protocol, args.k,
                            args.mask_jitter, args.seed, options,
                            args.swap_order)
    if args.report is None:
        w = csv.DictWriter(sys.stdout, fieldnames=dataio.METRIC_COLUMNS)
        w.writeheader()
        for row in report.rows:
            w.writerow({c: row.get(c, "") for c in dataio.METRIC_COLUMNS})
    elif args.report.endswith(".json"):
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.rows, f, indent=2)
            f.write("\n")
    else:
        dataio.write_metrics_csv(args.report, report.rows)
    if args.per_class:
        dataio.write_per_class_csv(
            args.per_class, dataset.vocabulary["predicate_classes"],
            report.per_class, report.gt_counts, report.inf_per_class)
    if args.report:
        print(f"wrote metrics to {args.report}")
    return 0


def cmd_bench(args) -> int:
    from .harness import dataio
    from .harness.bench import run_bench
    if args.batch != 1:
        raise SystemExit("only batch size 1 is implemented")
    model = load_checkpoint(args.ckpt)
    from .backbone import masks_to_logits, synth_scene
    if args.data:
        dataset = dataio.load_dataset(args.data)
        scene = dataset.scenes[args.scene]
        pixels, masks = scene.pixels, scene.masks
    else:
        image, panoptic, _, _ = synth_scene(
            0, image_hw=model.config.image_hw,
            n_predicates=model.config.n_predicates)
        pixels = image.pixels
        masks = panoptic.masks
    logits = masks_to_logits(masks, model.config.seg_stride)
    options = PairOptions(prune=args.prune, tome_ratio=args.tome_ratio,
                          bidirectional=args.bidir)
    row = run_bench(model, pixels, logits, options, args.lowres,
                    args.warmup, args.passes, args.rps_pairs, args.label)
    _emit_rows([row], args.out)
    return 0


def cmd_bench_kernels(args) -> int:
    from .harness.bench import bench_kernels
    rows = bench_kernels(args.hw, args.warmup, args.passes)
    _emit_rows(rows, args.out)
    return 0


def _emit_rows(rows: list[dict], out: str | None) -> None:
    if out is None:
        json.dump(rows, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    existing = []
    path = Path(out)
    if path.exists():
        existing = json.loads(path.read_text(encoding="utf-8"))
    existing.extend(rows)
    path.write_text(json.dumps(existing, indent=2) + "\n", encoding="utf-8")
    print(f"appended {len(rows)} row(s) to {out}")


def _load_rows(path: str) -> list[dict]:
    if path.endswith(".csv"):
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
        return doc if isinstance(doc, list) else [doc]
    except json.JSONDecodeError:
        return [json.loads(line) for line in text.splitlines() if line.strip()]


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    points = []
    for path in args.metrics:
        for row in _load_rows(path):
            try:
                if int(float(row.get("k", -1))) != args.k:
                    continue
                x = float(row["latency_ms_mean"])
                y = float(row["mR@k"])
            except (KeyError, TypeError, ValueError):
                continue
            points.append((x, y, f"{Path(path).stem}:{row.get('protocol', '?')}"))
    if not points:
        raise SystemExit(f"no rows with k={args.k} and metric columns found")
    fig, ax = plt.subplots(figsize=(5, 4))
    for x, y, label in points:
        ax.scatter([x], [y], s=36)
        ax.annotate(label, (x, y), textcoords="offset points", xytext=(4, 4),
                    fontsize=7)
    ax.set_xlabel("latency (ms, mean per image)")
    ax.set_ylabel(f"mR@{args.k}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(f"wrote {args.out} with {len(points)} point(s)")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "bench-kernels": cmd_bench_kernels,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.cmd](args)


if __name__ == "__main__":
    raise SystemExit(main())
