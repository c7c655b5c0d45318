"""Command-line entry point orchestrating the experiment lifecycle.

Subcommands: synth, prepare, train, eval, embed, report. Every command
writes its artifacts under an output directory with a machine-readable
``index.json``; report-style files are written via write-then-rename so a
failed command never leaves a partial report behind.

Exit codes: 0 success, 2 invalid configuration, 3 data errors, 4 training
divergence.
"""

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    SynthConfig,
    balance,
    extract_patches,
    load_manifest,
    load_patch_cache,
    split,
    synth_generate,
    write_patch_cache,
)
from .errors import ConfigError, DataError, StoneviewError, TrainingDivergedError
from .evaluation import (
    aggregate_runs,
    cluster_stats,
    compute_metrics,
    extract_embeddings,
    project_3d,
)
from .fusion import pair_views
from .training import (
    TEST_PAIRING_EPOCH,
    RunRecord,
    TrainConfig,
    load_checkpoint,
    train_multiview,
    train_single_view,
)

MODE_TOKENS = {"surface": "single_view_surface",
               "section": "single_view_section",
               "mixed": "single_view_mixed",
               "mv": "multi_view"}


@dataclass
class CommandOutcome:
    exit_code: int
    artifacts_written: list = field(default_factory=list)
    summary: str = ""


def _write_json_atomic(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _write_text_atomic(text, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _finish(out_dir, command, artifacts, summary, extra=None):
    index = {
        "command": command,
        "artifacts": sorted(str(Path(a).relative_to(out_dir)) for a in artifacts),
    }
    if extra:
        index.update(extra)
    idx_path = _write_json_atomic(index, Path(out_dir) / "index.json")
    artifacts = list(artifacts) + [idx_path]
    return CommandOutcome(0, [str(a) for a in artifacts], summary)


def _default_out(tag):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path("runs") / f"{stamp}-{tag}"


# -- synth ----------------------------------------------------------------

def cmd_synth(args):
    if args.config:
        config = SynthConfig.from_json(args.config)
        if args.seed is not None:
            config.seed = args.seed
    else:
        config = SynthConfig(
            seed=args.seed if args.seed is not None else 0,
            images_per_class_per_view=args.images_per_class,
            image_size=args.image_size,
            noise_std=args.noise_std,
        )
    config.validate()
    out_dir = Path(args.out or _default_out("synth"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, manifest_path = synth_generate(config, out_dir)
    summary = (f"synthesized {len(manifest)} images "
               f"({config.images_per_class_per_view} per class per view) "
               f"under {out_dir}")
    return _finish(out_dir, "synth", [manifest_path], summary,
                   extra={"config": vars(config).copy()})


# -- prepare --------------------------------------------------------------

def cmd_prepare(args):
    manifest = load_manifest(args.manifest)
    image_root = Path(args.manifest).parent
    out_dir = Path(args.out or _default_out("prepare"))
    out_dir.mkdir(parents=True, exist_ok=True)
    patches = []
    for rec in manifest.records:
        img_path = image_root / rec.image_path
        if not img_path.exists():
            raise DataError(f"image not found: {img_path}")
        pixels = np.asarray(Image.open(img_path).convert("RGB"))
        patches.extend(extract_patches(pixels, args.patch_size,
                                       args.max_overlap, source=rec))
    balanced = balance(patches, args.budget, args.seed)
    train_set, test_set = split(balanced, args.train_fraction, args.seed)
    index_path = write_patch_cache({"train": train_set, "test": test_set},
                                   out_dir)
    summary = (f"prepared {len(balanced)} patches "
               f"({len(train_set)} train / {len(test_set)} test) under {out_dir}")
    return _finish(out_dir, "prepare", [index_path], summary, extra={
        "patch_size": args.patch_size,
        "max_overlap": args.max_overlap,
        "budget": args.budget,
        "train_fraction": args.train_fraction,
        "seed": args.seed,
    })


# -- train ----------------------------------------------------------------

def _config_from_args(args):
    overrides = {
        "mode": MODE_TOKENS[args.mode] if args.mode else None,
        "fusion": args.fusion,
        "arch": args.arch,
        "attention": {"on": True, "off": False}.get(args.attention),
        "runs": args.runs,
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "jobs": args.jobs,
        "deterministic": True if args.deterministic else None,
    }
    if args.config:
        return TrainConfig.from_json(args.config, **overrides)
    filled = {k: v for k, v in overrides.items() if v is not None}
    return TrainConfig(**filled)


def cmd_train(args):
    config = _config_from_args(args)
    if config.mode == "multi_view" and not args.base_checkpoint:
        raise ConfigError("multi-view training requires --base-checkpoint")
    data = load_patch_cache(args.data)
    if "train" not in data or "test" not in data:
        raise DataError(f"patch cache at {args.data} lacks train/test splits")
    out_dir = Path(args.out or _default_out(f"train-{args.mode or config.mode}"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.mode == "multi_view":
        base, _ = load_checkpoint(args.base_checkpoint,
                                  expected_kind="single_view",
                                  expected_arch=config.arch)
        _, records = train_multiview(config, base, data, out_dir=out_dir)
    else:
        _, records = train_single_view(config, data, out_dir=out_dir)
    rows = []
    for rec in records:
        row = rec.as_dict()
        if row["checkpoint_path"]:
            row["checkpoint_path"] = str(
                Path(row["checkpoint_path"]).relative_to(out_dir)
            )
        rows.append(row)
    records_path = _write_json_atomic(
        {"config": config.as_dict(), "runs": rows}, out_dir / "records.json"
    )
    agg = aggregate_runs([r.test_metrics for r in records])
    agg_path = _write_json_atomic(agg.as_dict(), out_dir / "aggregate.json")
    artifacts = [records_path, agg_path]
    artifacts += [out_dir / f"run{r.run_index}.ckpt" for r in records]
    artifacts += [out_dir / f"run{r.run_index}_epochs.jsonl" for r in records]
    summary = (f"{config.mode}: {config.runs} run(s), "
               f"test accuracy {agg.format_metric('accuracy')}")
    return _finish(out_dir, "train", artifacts, summary,
                   extra={"config": config.as_dict()})


# -- eval -----------------------------------------------------------------

def _select_eval_inputs(model, meta, data, split_name, pair_seed):
    patches = data.get(split_name)
    if not patches:
        raise DataError(f"split {split_name!r} missing from patch cache")
    fingerprint = meta.get("train_fingerprint") or {}
    if meta["kind"] == "multi_view":
        pairs = pair_views(patches, pair_seed, TEST_PAIRING_EPOCH)
        return pairs, fingerprint.get("mode", "multi_view")
    mode = fingerprint.get("mode", "single_view_mixed")
    view = {"single_view_surface": "surface",
            "single_view_section": "section"}.get(mode)
    if view:
        patches = [p for p in patches if p.view == view]
    return patches, mode


def _predict_samples(model, meta, samples):
    from .dataset.tensorize import pairs_to_arrays, patches_to_arrays
    from .fusion import forward_multiview
    from .backbone import forward_logits

    if meta["kind"] == "multi_view":
        xs, xc, y = pairs_to_arrays(samples)
        preds = []
        for s in range(0, len(y), 512):
            logits = forward_multiview(model, (xs[s:s + 512], xc[s:s + 512]))
            preds.append(logits.argmax(axis=1))
        return np.concatenate(preds), y
    x, y = patches_to_arrays(samples)
    preds = []
    for s in range(0, len(y), 512):
        preds.append(forward_logits(model, x[s:s + 512]).argmax(axis=1))
    return np.concatenate(preds), y


def cmd_eval(args):
    from .plots import confusion_heatmap

    model, meta = load_checkpoint(args.checkpoint)
    data = load_patch_cache(args.data)
    samples, mode = _select_eval_inputs(model, meta, data, args.split,
                                        args.pair_seed)
    preds, labels = _predict_samples(model, meta, samples)
    report = compute_metrics(preds, labels)
    out_dir = Path(args.out or _default_out("eval"))
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = _write_json_atomic(report.as_dict(), out_dir / "metrics.json")
    heatmap_path = out_dir / "confusion.png"
    confusion_heatmap(report, heatmap_path)
    summary = (f"{mode} on {len(samples)} {args.split} samples: "
               f"accuracy {report.accuracy:.3f}, macro F1 {report.macro_f1:.3f}")
    return _finish(out_dir, "eval", [metrics_path, heatmap_path], summary)


# -- embed ----------------------------------------------------------------

def cmd_embed(args):
    from .plots import embedding_scatter

    model, meta = load_checkpoint(args.checkpoint)
    data = load_patch_cache(args.data)
    samples, mode = _select_eval_inputs(model, meta, data, args.split,
                                        args.seed)
    emb = extract_embeddings(model, samples, tag=f"{meta['kind']} ({mode})")
    emb = project_3d(emb, seed=args.seed, n_neighbors=args.neighbors)
    stats = cluster_stats(emb)
    out_dir = Path(args.out or _default_out("embed"))
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "embeddings.csv"
    emb.save_csv(csv_path)
    scatter_path = out_dir / "scatter3d.png"
    embedding_scatter(emb, scatter_path)
    stats_path = _write_json_atomic(stats, out_dir / "cluster_stats.json")
    summary = (f"embedded {emb.features.shape[0]} samples "
               f"(d={emb.features.shape[1]}): inter/intra "
               f"{stats['ratio']:.2f}, silhouette {stats['silhouette']:.3f}")
    return _finish(out_dir, "embed", [csv_path, scatter_path, stats_path],
                   summary)


# -- report ---------------------------------------------------------------

def _describe(config):
    mode = config.get("mode", "?")
    if mode == "multi_view":
        label = f"MV ({config.get('fusion', '?')})"
    else:
        label = {"single_view_surface": "Surface",
                 "single_view_section": "Section",
                 "single_view_mixed": "SUR+SEC"}.get(mode, mode)
    if config.get("attention"):
        label += " + attention"
    return label


def cmd_report(args):
    run_dir = Path(args.run_dir)
    record_files = sorted(run_dir.rglob("records.json"))
    if not record_files:
        raise DataError(f"no records.json found under {run_dir}")
    lines = [f"{'Model':<28} {'Accuracy':>15} {'Precision':>15} "
             f"{'Recall':>15} {'F1-score':>15}"]
    table = []
    for rf in record_files:
        with open(rf, encoding="utf-8") as fh:
            payload = json.load(fh)
        records = [RunRecord.from_dict(r) for r in payload["runs"]]
        agg = aggregate_runs([r.test_metrics for r in records])
        label = _describe(payload.get("config", {}))
        lines.append(
            f"{label:<28} {agg.format_metric('accuracy'):>15} "
            f"{agg.format_metric('macro_precision'):>15} "
            f"{agg.format_metric('macro_recall'):>15} "
            f"{agg.format_metric('macro_f1'):>15}"
        )
        table.append({"model": label, "runs": agg.run_count,
                      "source": str(rf.relative_to(run_dir)),
                      **agg.as_dict()["stats"]})
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    text = "\n".join(lines) + "\n"
    table_path = _write_text_atomic(text, out_dir / "summary_table.txt")
    json_path = _write_json_atomic({"rows": table}, out_dir / "summary.json")
    print(text, end="")
    summary = f"aggregated {len(table)} model(s) from {len(record_files)} record file(s)"
    return _finish(out_dir, "report", [table_path, json_path], summary)


# -- parser ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="stoneview",
        description="Multi-view kidney-stone patch classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic paired-view dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--images-per-class", type=int, default=20)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=6.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="patch, balance, and split a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--max-overlap", type=int, default=20)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train single-view or multi-view models")
    p.add_argument("--data", required=True, help="patch cache directory")
    p.add_argument("--out")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--mode", choices=sorted(MODE_TOKENS))
    p.add_argument("--fusion", choices=["max", "concat"])
    p.add_argument("--attention", choices=["on", "off"])
    p.add_argument("--arch", choices=["resnet50", "tiny"])
    p.add_argument("--base-checkpoint", help="mixed-view checkpoint for MV mode")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics + confusion heatmap for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test")
    p.add_argument("--pair-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="embeddings CSV + 3-D scatter + cluster stats")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neighbors", type=int, default=15)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="aggregate run records into a mean ± std table")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outcome = args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except StoneviewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(outcome.summary)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
