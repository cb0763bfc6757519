#!/usr/bin/env python3
"""End-to-end acceptance pipeline for the training harness.

Produces every artifact the slow acceptance tests check, wired exclusively
through the two CLIs:

  1. datasets rendered with `mosaic generate` (20k-scene classifier sets at
     64px, plus the 2k counting training set)
  2. four evaluation classifiers trained with `harness classify`
  3. a small U-Net trained on counting/base/uniform/2000 with
     `harness train` (validation accuracy via the counting classifier)
  4. 50 samples per condition with `harness sample`
  5. `harness predict` -> predictions.jsonl
  6. `mosaic evaluate` and `mosaic memorization` on the results

Restartable: finished stages are skipped. Run:

  python harness/scripts/run_acceptance.py [--out DIR] [--steps N]
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path


def sh(*args):
    print(f"+ {' '.join(str(a) for a in args)}", flush=True)
    t0 = time.time()
    subprocess.run([str(a) for a in args], check=True)
    print(f"  ({time.time() - t0:.0f}s)", flush=True)


def write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


DATASETS = {
    # name -> (dataset config, classifier head)
    "clf_counting": ({"task": "counting", "variant": "base", "size": 20000,
                      "distribution": "uniform", "seed": 1001, "resolution": 64,
                      "max_count": 10}, "count"),
    "clf_relation": ({"task": "spatial_relations", "variant": "base", "size": 20000,
                      "distribution": "uniform", "seed": 1002, "resolution": 64}, "relation"),
    "clf_attribution": ({"task": "attribution", "variant": "base", "size": 20000,
                         "distribution": "uniform", "seed": 1003, "resolution": 64},
                        "attribution"),
    "clf_color": ({"task": "counting", "variant": "composition", "size": 20000,
                   "distribution": "uniform", "seed": 1004, "resolution": 64}, "color"),
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="harness/e2e_artifacts")
    parser.add_argument("--steps", type=int, default=18000)
    parser.add_argument("--threads", type=int, default=2)
    args = parser.parse_args()
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)

    # 1. datasets
    for name, (config, _) in DATASETS.items():
        ds_dir = out / "datasets" / name
        if (ds_dir / "manifest.jsonl").exists():
            continue
        cfg_path = out / "datasets" / f"{name}.json"
        write_json(cfg_path, {**config, "output_dir": name})
        sh("mosaic", "generate", "--config", cfg_path, "--root", out / "datasets",
           "--threads", args.threads, "--quiet")

    train_ds = out / "datasets" / "train2k"
    if not (train_ds / "manifest.jsonl").exists():
        cfg_path = out / "datasets" / "train2k.json"
        write_json(cfg_path, {"task": "counting", "variant": "base", "size": 2000,
                              "distribution": "uniform", "seed": 7, "resolution": 64,
                              "output_dir": "train2k"})
        sh("mosaic", "generate", "--config", cfg_path, "--root", out / "datasets",
           "--threads", args.threads, "--quiet")

    # 2. classifiers
    for name, (_, head) in DATASETS.items():
        clf_path = out / "classifiers" / f"{head}.pt"
        if clf_path.exists():
            continue
        cfg_path = out / "classifiers" / f"{head}.json"
        write_json(cfg_path, {
            "manifest": str(out / "datasets" / name / "manifest.jsonl"),
            "out_path": str(clf_path), "head": head, "resolution": 64,
            "batch_size": 64, "lr": 1e-3, "max_epochs": 40, "patience": 25,
            "target_accuracy": 0.998, "seed": 10})
        sh("harness", "classify", "--config", cfg_path)

    # 3. diffusion training
    run_dir = out / "diffusion"
    if not (run_dir / "best.pt").exists() or not (run_dir / "DONE").exists():
        cfg_path = out / "diffusion_train.json"
        write_json(cfg_path, {
            "manifest": str(train_ds / "manifest.jsonl"),
            "out_dir": str(run_dir), "backbone": "unet",
            "objective": "score_matching", "preset": "small", "resolution": 64,
            "steps": args.steps, "batch_size": 32, "lr": 2e-4,
            "validation_interval": 500,
            "val_classifier": str(out / "classifiers" / "count.pt"),
            "val_samples_per_condition": 3, "val_sampler_steps": 20,
            "sampler_steps": 50, "seed": 0})
        sh("harness", "train", "--config", cfg_path)
        (run_dir / "DONE").write_text("ok\n")

    # 4. sampling: 50 per condition, no guidance
    gen_dir = out / "generated"
    have_samples = gen_dir.exists() and any(gen_dir.rglob("*.png"))
    if not have_samples:
        cfg_path = out / "sample.json"
        write_json(cfg_path, {
            "checkpoint": str(run_dir / "best.pt"), "out_dir": str(gen_dir),
            "conditions_from": str(train_ds / "manifest.jsonl"),
            "n_per_condition": 50, "sampler_steps": 50, "seed": 77})
        sh("harness", "sample", "--config", cfg_path)

    # 5. predictions
    preds_path = out / "predictions.jsonl"
    if not preds_path.exists():
        cfg_path = out / "predict.json"
        write_json(cfg_path, {
            "generated_dir": str(gen_dir), "out_path": str(preds_path),
            "classifiers": {"count": str(out / "classifiers" / "count.pt")}})
        sh("harness", "predict", "--config", cfg_path)

    # 6. evaluation through the toolkit
    sh("mosaic", "evaluate", "--manifest", train_ds / "manifest.jsonl",
       "--predictions", preds_path, "--out", out / "report", "--quiet")
    sh("mosaic", "memorization", "--generated-dir", gen_dir,
       "--train-manifest", train_ds / "manifest.jsonl",
       "--out", out / "memorization", "--quiet")

    summary = {
        "classifiers": {},
        "evaluate": str(out / "report" / "accuracy.csv"),
        "memorization": str(out / "memorization" / "memorization_summary.csv"),
    }
    for _, (_, head) in DATASETS.items():
        metrics_path = out / "classifiers" / f"{head}.metrics.json"
        with open(metrics_path) as f:
            summary["classifiers"][head] = json.load(f)
    write_json(out / "summary.json", summary)
    print("acceptance pipeline complete:", out, flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
