import json

import pytest


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small counting/base dataset rendered through the toolkit CLI; the
    files (manifest.jsonl + PNGs) are the interface under test."""
    from mosaic.cli import main as mosaic_main

    root = tmp_path_factory.mktemp("tiny_ds")
    config = {"task": "counting", "variant": "base", "size": 40,
              "distribution": "uniform", "seed": 11, "resolution": 32,
              "output_dir": "ds"}
    (root / "config.json").write_text(json.dumps(config), encoding="utf-8")
    assert mosaic_main(["generate", "--config", str(root / "config.json"),
                        "--root", str(root), "--quiet"]) == 0
    return root / "ds"


@pytest.fixture(scope="session")
def tiny_composition_dataset(tmp_path_factory):
    from mosaic.cli import main as mosaic_main

    root = tmp_path_factory.mktemp("tiny_comp")
    config = {"task": "counting", "variant": "composition", "size": 100,
              "distribution": "uniform", "seed": 12, "resolution": 32,
              "diagonals_removed": 1, "output_dir": "ds"}
    (root / "config.json").write_text(json.dumps(config), encoding="utf-8")
    assert mosaic_main(["generate", "--config", str(root / "config.json"),
                        "--root", str(root), "--quiet"]) == 0
    return root / "ds"
