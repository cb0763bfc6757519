"""Command-line surface: generate, evaluate, memorization, mine, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    ManifestRecord,
    ParseError,
    ValidationError,
    config_to_dict,
    label_slug,
    load_config,
    read_manifest,
    read_predictions,
    write_frequency_csv,
    write_manifest,
)
from .metrics import (
    MemorizationConfig,
    accuracy,
    distance_histograms,
    downsample_area,
    joint_accuracy,
    memorization_rate,
    nn_search,
)
from .mining import COUNT_MODE, RELATION_MODE, LlmEndpoint, RuleMatcher, llm_verify, mine_corpus, verified_table
from .render import RenderSettings, load_png, render_scene, save_png
from .reporting import ReportError, render_report
from .sampling import ConfigError, GenerationError, plan_dataset, sample_item
from .scene import Task, Variant


def _info(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_run_json(out_dir: Path, command: str, config_payload: dict, seed,
                    workers: int, warnings: list[str], started: float,
                    extra: dict) -> None:
    meta = {
        "version": __version__,
        "command": command,
        "config_hash": _config_hash(config_payload),
        "seed": seed,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "workers": workers,
        "warnings": warnings,
    }
    meta.update(extra)
    with open(out_dir / "run.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# --- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    started = time.perf_counter()
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        config = replace(config, seed=args.seed_override)
    plan = plan_dataset(config)

    root = Path(args.root) if args.root else Path.cwd()
    out_dir = root / config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    image_dir = out_dir / config.task.value / "train"
    image_dir.mkdir(parents=True, exist_ok=True)
    settings = RenderSettings(resolution=config.resolution)

    def produce(index: int) -> ManifestRecord:
        scene = sample_item(config, plan, index)
        image = render_scene(scene, settings)
        rel = f"{config.task.value}/train/{index:08d}.png"
        save_png(image, out_dir / rel)
        return ManifestRecord(
            id=f"{index:08d}", image=rel, task=config.task, variant=config.variant,
            labels=scene.labels, seen=True, scene=scene, seed=scene.seed,
        )

    workers = max(1, args.threads)
    if workers == 1:
        records = [produce(i) for i in range(plan.total)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(produce, range(plan.total)))
    write_manifest(records, out_dir / "manifest.jsonl")

    has_grid = config.task is Task.ATTRIBUTION or config.variant is Variant.COMPOSITION
    if has_grid:
        unseen_records = [
            ManifestRecord(id=f"unseen-{label_slug(lab)}", image=None, task=config.task,
                           variant=config.variant, labels=lab, seen=False,
                           scene=None, seed=None)
            for lab in plan.unseen_labels
        ]
        write_manifest(unseen_records, out_dir / "unseen_conditions.jsonl")

    payload = config_to_dict(config)
    _write_run_json(out_dir, "generate", payload, config.seed, workers, [], started, {
        "dataset": {
            "task": config.task.value,
            "variant": config.variant.value,
            "size": config.size,
            "distribution": config.distribution.value,
            "diagonals_removed": config.diagonals_removed,
        },
        "realized_total": plan.total,
        "unseen_conditions": len(plan.unseen_labels),
    })
    _info(args, f"wrote {plan.total} images and manifest to {out_dir}")
    return 0


# --- evaluate ----------------------------------------------------------------


def _default_heads(records) -> list[str]:
    first = records[0]
    if first.task is Task.COUNTING:
        heads = ["count"]
    elif first.task is Task.SPATIAL_RELATIONS:
        heads = ["relation"]
    else:
        heads = ["attribution"]
    if first.variant is Variant.COMPOSITION:
        heads.append("color")
    return heads


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    if not manifest:
        print("empty manifest", file=sys.stderr)
        return 1
    seen_keys = {r.labels.key() for r in manifest if r.seen}
    unseen_path = manifest_path.parent / "unseen_conditions.jsonl"
    unseen_keys = set()
    if unseen_path.exists():
        unseen_keys = {r.labels.key() for r in read_manifest(unseen_path)}

    predictions = read_predictions(args.predictions)
    heads = args.heads.split(",") if args.heads else _default_heads(manifest)

    split_records = {"seen": [], "unseen": [], "all": []}
    failures = []
    for record in predictions.records:
        key = record.true_labels.key()
        if key in seen_keys:
            split_records["seen"].append(record)
        elif key in unseen_keys:
            split_records["unseen"].append(record)
        else:
            failures.append(record.id)
            continue
        split_records["all"].append(record)
    if failures:
        print(f"{len(failures)} predictions do not join to any dataset condition: "
              f"{failures[:10]}", file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    acc_rows, per_class_rows, confusion_rows, joint_rows = [], [], [], []
    for split in ("seen", "unseen", "all"):
        records = split_records[split]
        if not records:
            continue
        for head in heads:
            report = accuracy(records, head)
            acc_rows.append({"head": head, "split": split, "n": report.n,
                             "n_null": report.n_null,
                             "accuracy": f"{report.overall:.6f}"})
            for cls, value in report.per_class.items():
                per_class_rows.append({"head": head, "split": split, "class": cls,
                                       "n": report.per_class_n[cls],
                                       "accuracy": f"{value:.6f}"})
            for true_cls, pred_cls, count in report.confusion_rows():
                confusion_rows.append({"head": head, "split": split, "true": true_cls,
                                       "pred": pred_cls, "count": count})
        if len(heads) >= 2:
            value = joint_accuracy(records, heads)
            joint_rows.append({"heads": "+".join(heads), "split": split,
                               "n": len(records), "joint_accuracy": f"{value:.6f}"})

    _write_csv(out_dir / "accuracy.csv",
               ["head", "split", "n", "n_null", "accuracy"], acc_rows)
    _write_csv(out_dir / "per_class.csv",
               ["head", "split", "class", "n", "accuracy"], per_class_rows)
    _write_csv(out_dir / "confusion.csv",
               ["head", "split", "true", "pred", "count"], confusion_rows)
    if len(heads) >= 2:
        _write_csv(out_dir / "joint.csv",
                   ["heads", "split", "n", "joint_accuracy"], joint_rows)

    dataset_meta = _dataset_meta_near(manifest_path)
    payload = {"manifest": str(args.manifest), "predictions": str(args.predictions),
               "heads": heads}
    _write_run_json(out_dir, "evaluate", payload, None, 1,
                    predictions.warnings, started,
                    {"dataset": dataset_meta, "heads": heads,
                     "n_predictions": len(predictions.records)})
    _info(args, f"evaluated {len(predictions.records)} predictions -> {out_dir}")
    return 0


def _dataset_meta_near(manifest_path: Path) -> dict:
    run_file = manifest_path.parent / "run.json"
    if run_file.exists():
        try:
            with open(run_file, "r", encoding="utf-8") as f:
                return json.load(f).get("dataset", {})
        except (OSError, json.JSONDecodeError):
            pass
    return {}


# --- memorization --------------------------------------------------------------


def cmd_memorization(args) -> int:
    started = time.perf_counter()
    manifest_path = Path(args.train_manifest)
    manifest = read_manifest(manifest_path)
    dataset_root = manifest_path.parent
    train_records = [r for r in manifest if r.seen and r.image]
    missing = [r.image for r in train_records if not (dataset_root / r.image).exists()]

    generated_dir = Path(args.generated_dir)
    generated_paths = sorted(p for p in generated_dir.rglob("*.png"))
    if not generated_paths:
        print(f"no PNG files under {generated_dir}", file=sys.stderr)
        return 1
    if missing:
        print(f"{len(missing)} training images missing: {missing[:10]}", file=sys.stderr)
        return 1

    train_images = np.stack([load_png(dataset_root / r.image) for r in train_records])
    generated_images = np.stack([load_png(p) for p in generated_paths])
    if train_images.shape[1:] != generated_images.shape[1:]:
        print(f"image shape mismatch: train {train_images.shape[1:]} vs "
              f"generated {generated_images.shape[1:]}", file=sys.stderr)
        return 1

    downsample = 64 if args.downsample else None
    if downsample:
        train_images = downsample_area(train_images, downsample)
        generated_images = downsample_area(generated_images, downsample)

    ids = [p.relative_to(generated_dir).with_suffix("").as_posix() for p in generated_paths]
    labels_by_id = {
        i: (p.relative_to(generated_dir).parent.as_posix()
            if p.parent != generated_dir else "all")
        for i, p in zip(ids, generated_paths)
    }

    config = MemorizationConfig(k=args.k, downsample_to=downsample)
    results = nn_search(generated_images, train_images, generated_ids=ids)
    rate, flags = memorization_rate(results, config)
    hist = distance_histograms(results, labels_by_id, bins=args.bins)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "memorization.csv",
               ["id", "d1", "d2", "ratio", "memorized"],
               [{"id": r.generated_id, "d1": f"{r.d1:.6f}", "d2": f"{r.d2:.6f}",
                 "ratio": f"{r.ratio:.6f}", "memorized": str(flag).lower()}
                for r, flag in zip(results, flags)])
    for label, counts in hist.per_label.items():
        safe = label.replace("/", "_")
        _write_csv(out_dir / f"hist_{safe}.csv",
                   ["bin_lo", "bin_hi", "count"],
                   [{"bin_lo": f"{hist.bin_edges[b]:.6f}",
                     "bin_hi": f"{hist.bin_edges[b + 1]:.6f}",
                     "count": int(counts[b])}
                    for b in range(len(counts))])
    _write_csv(out_dir / "memorization_summary.csv",
               ["k", "n", "rate", "mean_d1"],
               [{"k": f"{config.k:.6f}", "n": len(results),
                 "rate": f"{rate:.6f}", "mean_d1": f"{hist.mean_d1:.6f}"}])

    payload = {"generated_dir": str(args.generated_dir),
               "train_manifest": str(args.train_manifest),
               "k": args.k, "downsample": downsample, "bins": args.bins}
    _write_run_json(out_dir, "memorization", payload, None, 1, [], started, {
        "dataset": _dataset_meta_near(manifest_path),
        "k": args.k,
        "rate": rate,
        "n_generated": len(results),
        "n_training": len(train_records),
        "distance_space": {
            "pixels": list(generated_images.shape[1:]),
            "downsample": downsample,
        },
    })
    _info(args, f"memorization rate {rate:.4f} over {len(results)} samples -> {out_dir}")
    return 0


# --- mine -----------------------------------------------------------------------


def cmd_mine(args) -> int:
    from .mining import load_rules

    matcher = RuleMatcher(load_rules(args.rules) if args.rules else None)
    table = mine_corpus(args.input, args.mode, sample_rate=args.sample_rate,
                        seed=args.seed, matcher=matcher)
    write_frequency_csv(table.counts, args.out)
    _info(args, f"mined {table.sampled_lines}/{table.total_lines} lines "
                f"({table.skipped_lines} skipped) -> {args.out}")

    if args.llm_endpoint:
        endpoint = LlmEndpoint(url=args.llm_endpoint, model=args.llm_model or "default",
                               key_env=args.llm_key_env)
        candidates = _candidate_captions(args, matcher)
        verifications = llm_verify(candidates, args.mode, endpoint, matcher)
        vtable = verified_table(verifications, args.mode, matcher)
        verified_out = str(Path(args.out).with_name(Path(args.out).stem + "_verified.csv"))
        write_frequency_csv(vtable.counts, verified_out)
        unverified = sum(1 for v in verifications if not v.verified)
        _info(args, f"LLM verified {len(verifications) - unverified}/{len(verifications)} "
                    f"candidates -> {verified_out}")
    return 0


def _candidate_captions(args, matcher: RuleMatcher) -> list[str]:
    """Sampled lines with at least one rule-stage hit, in corpus order."""
    from .mining import _open_stream, sampling_hash

    captions = []
    with _open_stream(args.input) as stream:
        for line_number, raw in enumerate(stream):
            if sampling_hash(args.seed, line_number) >= args.sample_rate:
                continue
            try:
                caption = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                continue
            if args.mode == COUNT_MODE:
                if matcher.extract_count_mentions(caption):
                    captions.append(caption)
            elif matcher.extract_relation_mentions(caption):
                captions.append(caption)
    return captions


# --- report ----------------------------------------------------------------------


def cmd_report(args) -> int:
    started = time.perf_counter()
    try:
        summary = render_report(args.dirs, args.out)
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out)
    payload = {"dirs": [str(d) for d in args.dirs]}
    _write_run_json(out_dir, "report", payload, None, 1, [], started, summary)
    _info(args, f"report with {summary['merged_rows']} merged rows -> {out_dir}")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaic",
        description="Synthesize controlled multi-object image datasets and "
                    "evaluate generative-model outputs against them.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", default=None, help="base directory for relative paths")
    common.add_argument("--threads", type=int, default=min(4, os.cpu_count() or 1))
    common.add_argument("--seed-override", type=int, default=None)
    common.add_argument("--quiet", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a dataset from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="score a predictions file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--heads", default=None, help="comma-separated head names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("memorization", parents=[common],
                       help="nearest-training-image analysis of generated samples")
    p.add_argument("--generated-dir", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--k", type=float, default=1.0 / 3.0)
    p.add_argument("--downsample", action="store_true",
                   help="area-average to 64x64 before distance computation")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_memorization)

    p = sub.add_parser("mine", parents=[common], help="caption-corpus frequency mining")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=[COUNT_MODE, RELATION_MODE], required=True)
    p.add_argument("--sample-rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rules", default=None, help="override the mining rules JSON")
    p.add_argument("--llm-endpoint", default=None)
    p.add_argument("--llm-model", default=None)
    p.add_argument("--llm-key-env", default=None,
                   help="environment variable holding the API key")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("report", parents=[common],
                       help="merge report dirs and render size-trend charts")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GenerationError, ValidationError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
