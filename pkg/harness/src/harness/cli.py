"""Harness CLI: train | sample | classify | predict | embed, each driven by
a JSON config file."""

from __future__ import annotations

import argparse
import sys

from .config import (
    ClassifierConfig,
    DiffusionConfig,
    EmbedConfig,
    PredictConfig,
    SampleConfig,
    load_json,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="harness",
        description="Desk-scale conditional diffusion training and evaluation feeds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "sample", "classify", "predict", "embed"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
    args = parser.parse_args(argv)
    data = load_json(args.config)

    if args.command == "train":
        from .training import train_diffusion

        result = train_diffusion(DiffusionConfig.from_dict(data))
        print(f"trained {result.steps} steps, final loss {result.final_loss:.4f}, "
              f"best val accuracy {result.best_val_accuracy}", file=sys.stderr)
    elif args.command == "sample":
        from .predict import sample_conditions

        out = sample_conditions(SampleConfig.from_dict(data))
        print(f"samples written under {out}", file=sys.stderr)
    elif args.command == "classify":
        from .classifiers import train_classifier

        metrics = train_classifier(ClassifierConfig.from_dict(data))
        print(f"{metrics.head}: val {metrics.val_accuracy:.4f}, "
              f"test {metrics.test_accuracy:.4f} after {metrics.epochs} epochs",
              file=sys.stderr)
    elif args.command == "predict":
        from .predict import emit_predictions

        out = emit_predictions(PredictConfig.from_dict(data))
        print(f"predictions written to {out}", file=sys.stderr)
    else:
        from .embeddings import export_embeddings

        out = export_embeddings(EmbedConfig.from_dict(data))
        print(f"embeddings written to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
