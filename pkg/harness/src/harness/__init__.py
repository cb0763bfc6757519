"""Desk-scale conditional diffusion training harness: trains U-Net / DiT
noise predictors with a jointly trained condition encoder, samples images
per condition, trains evaluation classifiers, and emits prediction files
for the dataset toolkit's evaluator."""

__version__ = "0.1.0"
