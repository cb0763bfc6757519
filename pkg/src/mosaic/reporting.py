"""Report rendering: merged long-format CSV plus accuracy-vs-size and
memorization-vs-size line charts.

Charts are written as SVG with a fixed hash salt and no embedded date, so
re-running a report produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "mosaic"
plt.rcParams["figure.figsize"] = (6.0, 4.0)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


class ReportError(ValueError):
    pass


@dataclass
class ReportDir:
    path: Path
    dataset: dict  # task / variant / size / distribution
    accuracy_rows: list[dict]
    memorization_rows: list[dict]


def _read_csv(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def load_report_dir(path) -> ReportDir:
    path = Path(path)
    run_file = path / "run.json"
    dataset = {}
    if run_file.exists():
        with open(run_file, "r", encoding="utf-8") as f:
            dataset = json.load(f).get("dataset", {})
    acc_file = path / "accuracy.csv"
    mem_file = path / "memorization_summary.csv"
    return ReportDir(
        path=path,
        dataset=dataset,
        accuracy_rows=_read_csv(acc_file) if acc_file.exists() else [],
        memorization_rows=_read_csv(mem_file) if mem_file.exists() else [],
    )


def _series_key(dataset: dict) -> str:
    return f"{dataset.get('distribution', '?')}/{dataset.get('variant', '?')}"


def _save_series_chart(series: dict[str, list[tuple[int, float]]], ylabel: str,
                       out_path: Path) -> None:
    fig, ax = plt.subplots()
    for name in sorted(series):
        points = sorted(series[name])
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("dataset size")
    ax.set_ylabel(ylabel)
    ax.set_ylim(-0.02, 1.02)
    if series:
        ax.legend(fontsize=8)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_report(report_dirs: list, out_dir) -> dict:
    """Merge evaluation/memorization outputs and render the size-trend charts.

    Returns a small summary (row and series counts) for run metadata.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dirs = [load_report_dir(p) for p in report_dirs]
    if not dirs:
        raise ReportError("need at least one report directory")

    head_sets = {d.path: tuple(sorted({r["head"] for r in d.accuracy_rows}))
                 for d in dirs if d.accuracy_rows}
    distinct = set(head_sets.values())
    if len(distinct) > 1:
        offenders = ", ".join(f"{p} -> {hs}" for p, hs in head_sets.items())
        raise ReportError(f"inconsistent heads across report dirs: {offenders}")

    merged_rows = []
    acc_series: dict[str, list[tuple[int, float]]] = {}
    mem_series: dict[str, list[tuple[int, float]]] = {}
    for d in dirs:
        size = int(d.dataset.get("size", 0) or 0)
        base = {
            "dir": str(d.path),
            "task": d.dataset.get("task", ""),
            "variant": d.dataset.get("variant", ""),
            "distribution": d.dataset.get("distribution", ""),
            "size": size,
        }
        for row in d.accuracy_rows:
            merged_rows.append({**base, "metric": "accuracy", "head": row["head"],
                                "split": row["split"], "value": row["accuracy"]})
            if row["split"] == "all" and size > 0:
                acc_series.setdefault(_series_key(d.dataset), []).append(
                    (size, float(row["accuracy"])))
        for row in d.memorization_rows:
            merged_rows.append({**base, "metric": "memorization_rate", "head": "",
                                "split": "all", "value": row["rate"]})
            if size > 0:
                mem_series.setdefault(_series_key(d.dataset), []).append(
                    (size, float(row["rate"])))

    merged_path = out_dir / "merged.csv"
    fields = ["dir", "task", "variant", "distribution", "size",
              "metric", "head", "split", "value"]
    with open(merged_path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(merged_rows)

    _save_series_chart(acc_series, "accuracy", out_dir / "accuracy_vs_size.svg")
    _save_series_chart(mem_series, "memorization rate", out_dir / "memorization_vs_size.svg")
    return {
        "merged_rows": len(merged_rows),
        "accuracy_series": len(acc_series),
        "memorization_series": len(mem_series),
    }
