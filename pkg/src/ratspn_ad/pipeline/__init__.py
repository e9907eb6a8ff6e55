"""Synthetic data, patch sampling and heatmap scoring."""

from .imageio import read_pgm, to_preview, write_pgm
from .patches import PatchSet, Provenance, extract_dataset_patches, extract_patches, split_dataset
from .scoring import HeatmapResult, position_labels, score_image, threshold_heatmap, upsample_nearest
from .synthetic import LabeledImage, make_synthetic_dataset, read_dataset, write_dataset

__all__ = [
    "HeatmapResult",
    "LabeledImage",
    "PatchSet",
    "Provenance",
    "extract_dataset_patches",
    "extract_patches",
    "make_synthetic_dataset",
    "position_labels",
    "read_dataset",
    "read_pgm",
    "score_image",
    "split_dataset",
    "threshold_heatmap",
    "to_preview",
    "upsample_nearest",
    "write_dataset",
    "write_pgm",
]
