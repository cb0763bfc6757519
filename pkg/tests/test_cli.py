import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from mosaic.cli import main
from mosaic.dataio import (
    PredictionRecord,
    label_slug,
    read_manifest,
    write_predictions,
)
from mosaic.metrics import accuracy
from mosaic.dataio import read_predictions

DATA = Path(__file__).parent / "data"


def _write_config(path, **overrides):
    config = {"task": "counting", "variant": "base", "size": 20,
              "distribution": "uniform", "seed": 5, "resolution": 32,
              "output_dir": "ds"}
    config.update(overrides)
    path.write_text(json.dumps(config), encoding="utf-8")
    return config


def _generate(tmp_path, **overrides) -> Path:
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg_path = tmp_path / "config.json"
    _write_config(cfg_path, **overrides)
    assert main(["generate", "--config", str(cfg_path), "--root", str(tmp_path),
                 "--threads", "1", "--quiet"]) == 0
    return tmp_path / overrides.get("output_dir", "ds")


def test_generate_counting(tmp_path):
    out = _generate(tmp_path)
    records = read_manifest(out / "manifest.jsonl")
    assert len(records) == 20
    pngs = list((out / "counting" / "train").glob("*.png"))
    assert len(pngs) == 20
    run = json.loads((out / "run.json").read_text())
    assert run["realized_total"] == 20
    assert run["dataset"]["task"] == "counting"
    for r in records:
        assert (out / r.image).exists()


def test_generate_invalid_config_exit_2_no_files(tmp_path):
    cfg_path = tmp_path / "config.json"
    _write_config(cfg_path, diagonals_removed=3)
    assert main(["generate", "--config", str(cfg_path), "--root", str(tmp_path),
                 "--quiet"]) == 2
    assert not (tmp_path / "ds").exists()


def test_generate_attribution_holdout_unseen_list(tmp_path):
    out = _generate(tmp_path, task="attribution", size=100, diagonals_removed=5,
                    resolution=16)
    records = read_manifest(out / "manifest.jsonl")
    assert len(records) == 100  # 50 seen cells x 2
    unseen = read_manifest(out / "unseen_conditions.jsonl")
    assert len(unseen) == 50
    assert all(not r.seen and r.image is None for r in unseen)


def test_generate_thread_count_is_byte_invariant(tmp_path):
    out1 = _generate(tmp_path / "a")
    out4_root = tmp_path / "b"
    cfg_path = out4_root / "config.json"
    out4_root.mkdir()
    _write_config(cfg_path)
    assert main(["generate", "--config", str(cfg_path), "--root", str(out4_root),
                 "--threads", "4", "--quiet"]) == 0
    out4 = out4_root / "ds"
    assert (out1 / "manifest.jsonl").read_bytes() == (out4 / "manifest.jsonl").read_bytes()
    pngs1 = sorted((out1 / "counting" / "train").glob("*.png"))
    pngs4 = sorted((out4 / "counting" / "train").glob("*.png"))
    assert [p.name for p in pngs1] == [p.name for p in pngs4]
    for a, b in zip(pngs1, pngs4):
        assert a.read_bytes() == b.read_bytes()


def _predictions_from_manifest(out, wrong_every=5):
    records = read_manifest(out / "manifest.jsonl")
    preds = []
    for i, r in enumerate(records):
        true = r.labels.count
        pred = true + 1 if (i % wrong_every == 0) else true
        preds.append(PredictionRecord(id=f"g{i:04d}", true_labels=r.labels,
                                      predicted={"count": pred}, image=None))
    return preds


def test_evaluate_writes_reports(tmp_path):
    out = _generate(tmp_path)
    preds_path = tmp_path / "predictions.jsonl"
    preds = _predictions_from_manifest(out)
    write_predictions(preds, preds_path)
    report_dir = tmp_path / "report"
    assert main(["evaluate", "--manifest", str(out / "manifest.jsonl"),
                 "--predictions", str(preds_path), "--out", str(report_dir),
                 "--quiet"]) == 0
    acc_csv = (report_dir / "accuracy.csv").read_text().splitlines()
    assert acc_csv[0] == "head,split,n,n_null,accuracy"
    expected = accuracy(preds, "count").overall
    all_row = [line for line in acc_csv if line.startswith("count,all")][0]
    assert float(all_row.split(",")[4]) == pytest.approx(expected)
    assert (report_dir / "per_class.csv").exists()
    assert (report_dir / "confusion.csv").exists()
    assert not (report_dir / "joint.csv").exists()  # single head


def test_evaluate_is_idempotent(tmp_path):
    out = _generate(tmp_path)
    preds_path = tmp_path / "predictions.jsonl"
    write_predictions(_predictions_from_manifest(out), preds_path)
    report_dir = tmp_path / "report"
    argv = ["evaluate", "--manifest", str(out / "manifest.jsonl"),
            "--predictions", str(preds_path), "--out", str(report_dir), "--quiet"]
    assert main(argv) == 0
    first = {p.name: p.read_bytes() for p in report_dir.glob("*.csv")}
    assert main(argv) == 0
    second = {p.name: p.read_bytes() for p in report_dir.glob("*.csv")}
    assert first == second


def test_evaluate_join_failure_exits_1(tmp_path):
    from mosaic.scene import ConditionLabel

    out = _generate(tmp_path)
    preds_path = tmp_path / "predictions.jsonl"
    # a condition that exists in no dataset cell
    stray = PredictionRecord(id="x", true_labels=ConditionLabel(count=9, object_color="RED"),
                             predicted={"count": 9, "color": 0}, image=None)
    write_predictions([stray], preds_path)
    assert main(["evaluate", "--manifest", str(out / "manifest.jsonl"),
                 "--predictions", str(preds_path), "--out", str(tmp_path / "r"),
                 "--quiet"]) == 1


def test_evaluate_unseen_only_predictions(tmp_path):
    out = _generate(tmp_path, task="attribution", size=100, diagonals_removed=5,
                    resolution=16)
    unseen = read_manifest(out / "unseen_conditions.jsonl")
    preds = [PredictionRecord(id=f"u{i}", true_labels=r.labels,
                              predicted={"attribution": 3}, image=None)
             for i, r in enumerate(unseen)]
    preds_path = tmp_path / "preds.jsonl"
    write_predictions(preds, preds_path)
    report_dir = tmp_path / "report"
    assert main(["evaluate", "--manifest", str(out / "manifest.jsonl"),
                 "--predictions", str(preds_path), "--out", str(report_dir),
                 "--heads", "attribution", "--quiet"]) == 0
    rows = (report_dir / "accuracy.csv").read_text().splitlines()[1:]
    splits = {line.split(",")[1] for line in rows}
    assert "unseen" in splits and "seen" not in splits


def test_memorization_exact_copies(tmp_path):
    out = _generate(tmp_path)
    gen_dir = tmp_path / "generated" / "count-1"
    gen_dir.mkdir(parents=True)
    train_pngs = sorted((out / "counting" / "train").glob("*.png"))[:10]
    for i, p in enumerate(train_pngs):
        shutil.copy(p, gen_dir / f"{i:03d}.png")
    report_dir = tmp_path / "memo"
    assert main(["memorization", "--generated-dir", str(tmp_path / "generated"),
                 "--train-manifest", str(out / "manifest.jsonl"),
                 "--out", str(report_dir), "--quiet"]) == 0
    run = json.loads((report_dir / "run.json").read_text())
    assert run["rate"] == 1.0
    assert abs(run["k"] - 0.333333) < 1e-6
    rows = (report_dir / "memorization.csv").read_text().splitlines()
    assert rows[0] == "id,d1,d2,ratio,memorized"
    assert len(rows) == 11
    assert (report_dir / "hist_count-1.csv").exists()
    summary = (report_dir / "memorization_summary.csv").read_text().splitlines()
    assert summary[1].split(",")[2] == "1.000000"


def test_memorization_missing_generated_dir(tmp_path):
    out = _generate(tmp_path)
    empty = tmp_path / "nothing"
    empty.mkdir()
    assert main(["memorization", "--generated-dir", str(empty),
                 "--train-manifest", str(out / "manifest.jsonl"),
                 "--out", str(tmp_path / "m"), "--quiet"]) == 1


def test_mine_cli(tmp_path):
    out_csv = tmp_path / "freq.csv"
    assert main(["mine", "--input", str(DATA / "miner_corpus.txt"),
                 "--mode", "count", "--sample-rate", "1.0", "--seed", "0",
                 "--out", str(out_csv), "--quiet"]) == 0
    text = out_csv.read_text()
    assert text.startswith("class,count\n")
    assert "2,3" in text  # three captions mention two objects


def test_report_merges_and_renders(tmp_path):
    out = _generate(tmp_path)
    preds_path = tmp_path / "predictions.jsonl"
    write_predictions(_predictions_from_manifest(out), preds_path)
    r1 = tmp_path / "r1"
    assert main(["evaluate", "--manifest", str(out / "manifest.jsonl"),
                 "--predictions", str(preds_path), "--out", str(r1), "--quiet"]) == 0

    out2 = _generate(tmp_path / "second", size=40, seed=6)
    preds2 = tmp_path / "p2.jsonl"
    write_predictions(_predictions_from_manifest(out2), preds2)
    r2 = tmp_path / "r2"
    assert main(["evaluate", "--manifest", str(out2 / "manifest.jsonl"),
                 "--predictions", str(preds2), "--out", str(r2), "--quiet"]) == 0

    report_dir = tmp_path / "final"
    assert main(["report", str(r1), str(r2), "--out", str(report_dir), "--quiet"]) == 0
    svg = (report_dir / "accuracy_vs_size.svg").read_bytes()
    assert svg.startswith(b"<?xml")
    assert (report_dir / "memorization_vs_size.svg").exists()
    merged = (report_dir / "merged.csv").read_text().splitlines()
    rows_r1 = len((r1 / "accuracy.csv").read_text().splitlines()) - 1
    rows_r2 = len((r2 / "accuracy.csv").read_text().splitlines()) - 1
    assert len(merged) - 1 == rows_r1 + rows_r2


def test_report_single_dir_and_idempotent(tmp_path):
    out = _generate(tmp_path)
    preds_path = tmp_path / "predictions.jsonl"
    write_predictions(_predictions_from_manifest(out), preds_path)
    r1 = tmp_path / "r1"
    assert main(["evaluate", "--manifest", str(out / "manifest.jsonl"),
                 "--predictions", str(preds_path), "--out", str(r1), "--quiet"]) == 0
    report_dir = tmp_path / "final"
    argv = ["report", str(r1), "--out", str(report_dir), "--quiet"]
    assert main(argv) == 0
    first = (report_dir / "accuracy_vs_size.svg").read_bytes()
    assert main(argv) == 0
    assert (report_dir / "accuracy_vs_size.svg").read_bytes() == first


def test_generate_seed_override_changes_output(tmp_path):
    cfg_path = tmp_path / "config.json"
    _write_config(cfg_path, size=12)
    assert main(["generate", "--config", str(cfg_path), "--root", str(tmp_path),
                 "--quiet"]) == 0
    base_manifest = (tmp_path / "ds" / "manifest.jsonl").read_bytes()
    other = tmp_path / "other"
    other.mkdir()
    _write_config(other / "config.json", size=12)
    assert main(["generate", "--config", str(other / "config.json"),
                 "--root", str(other), "--seed-override", "99", "--quiet"]) == 0
    assert (other / "ds" / "manifest.jsonl").read_bytes() != base_manifest
    run = json.loads((other / "ds" / "run.json").read_text())
    assert run["seed"] == 99


def test_mine_cli_with_llm_stub(tmp_path):
    import threading
    from http.server import ThreadingHTTPServer
    from tests.test_miner import _ScriptedHandler

    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        _ScriptedHandler.script = {"three small boxes arrived": ["error"]}
        out_csv = tmp_path / "freq.csv"
        assert main(["mine", "--input", str(DATA / "miner_corpus.txt"),
                     "--mode", "count", "--sample-rate", "1.0", "--seed", "0",
                     "--llm-endpoint",
                     f"http://127.0.0.1:{server.server_address[1]}/v1/chat",
                     "--llm-model", "stub",
                     "--out", str(out_csv), "--quiet"]) == 0
        verified = (tmp_path / "freq_verified.csv").read_text().splitlines()
        rule = out_csv.read_text().splitlines()
        assert rule[0] == verified[0] == "class,count"
        rule_counts = dict(line.split(",") for line in rule[1:])
        verified_counts = dict(line.split(",") for line in verified[1:])
        # the failure-injected caption carried the only "3"-then-"3" pair once
        assert int(verified_counts["3"]) < int(rule_counts["3"])
        assert int(verified_counts["2"]) == int(rule_counts["2"])
    finally:
        server.shutdown()
        thread.join()


def test_report_series_per_distribution_and_variant(tmp_path):
    # fabricate eight evaluation dirs: four sizes x two distributions
    dirs = []
    for dist in ("uniform", "skewed"):
        for size in (2000, 10000, 50000, 100000):
            d = tmp_path / f"r_{dist}_{size}"
            d.mkdir()
            (d / "accuracy.csv").write_text(
                "head,split,n,n_null,accuracy\n"
                f"count,all,500,0,{0.5 + size / 250000:.6f}\n", encoding="utf-8")
            (d / "run.json").write_text(json.dumps({
                "dataset": {"task": "counting", "variant": "base",
                            "size": size, "distribution": dist}}), encoding="utf-8")
            dirs.append(str(d))
    out_dir = tmp_path / "charts"
    assert main(["report", *dirs, "--out", str(out_dir), "--quiet"]) == 0
    run = json.loads((out_dir / "run.json").read_text())
    assert run["accuracy_series"] == 2  # one series per (distribution, variant)
    merged = (out_dir / "merged.csv").read_text().splitlines()
    assert len(merged) - 1 == 8


def test_report_rejects_inconsistent_heads(tmp_path):
    a = tmp_path / "a"
    a.mkdir()
    (a / "accuracy.csv").write_text(
        "head,split,n,n_null,accuracy\ncount,all,10,0,0.9\n", encoding="utf-8")
    b = tmp_path / "b"
    b.mkdir()
    (b / "accuracy.csv").write_text(
        "head,split,n,n_null,accuracy\nrelation,all,10,0,0.9\n", encoding="utf-8")
    assert main(["report", str(a), str(b), "--out", str(tmp_path / "out"),
                 "--quiet"]) == 1
