"""Colorized MNIST data, color metrics and the asymmetric translation model."""

from ._core import (
    Error,
    Model,
    PairedDataset,
    color_recall,
    color_report,
    generate_dataset,
    read_dataset,
    train,
    unique_color_count,
)

__all__ = [
    "Error",
    "Model",
    "PairedDataset",
    "color_recall",
    "color_report",
    "generate_dataset",
    "read_dataset",
    "train",
    "unique_color_count",
]
