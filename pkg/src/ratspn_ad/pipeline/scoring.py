"""Sliding-window anomaly heatmaps and percentile segmentation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .patches import HALF, PATCH_SIZE, patch_at
from .synthetic import LabeledImage

DEFAULT_STRIDE = 16
DEFAULT_PERCENTILE = 99.0


@dataclass
class HeatmapResult:
    scores: np.ndarray  # (gh, gw) score grid; invalid cells hold the minimum valid score
    valid: np.ndarray  # (gh, gw) bool, patch center inside tissue
    upsampled: np.ndarray  # (H, W) nearest-neighbour fill of ``scores``
    stride: int = DEFAULT_STRIDE
    segmentation: np.ndarray | None = None  # (H, W) bool once thresholded

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.scores.shape

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.upsampled.shape

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return grid_centers(self.image_shape, self.stride)

    def valid_scores(self) -> np.ndarray:
        return self.scores[self.valid]


def grid_shape(image_shape, stride: int = DEFAULT_STRIDE) -> tuple[int, int]:
    h, w = image_shape
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise ValueError(f"image {h}x{w} is smaller than a {PATCH_SIZE}x{PATCH_SIZE} patch")
    return (h - PATCH_SIZE) // stride + 1, (w - PATCH_SIZE) // stride + 1


def grid_centers(image_shape, stride: int = DEFAULT_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """Row and column coordinates of window centers (top-left + 32)."""
    gh, gw = grid_shape(image_shape, stride)
    return np.arange(gh) * stride + HALF, np.arange(gw) * stride + HALF


def valid_positions(tissue_mask: np.ndarray, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    rows, cols = grid_centers(tissue_mask.shape, stride)
    return np.asarray(tissue_mask, dtype=bool)[np.ix_(rows, cols)]


def position_labels(mask: np.ndarray, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Grid-resolution labels: a position is positive iff its center is in ``mask``."""
    return valid_positions(mask, stride)


def upsample_nearest(grid: np.ndarray, image_shape, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Give every pixel the value of the nearest window center."""
    h, w = image_shape
    gh, gw = grid.shape

    def index(n, g):
        return np.clip(np.floor((np.arange(n) - HALF) / stride + 0.5).astype(np.int64), 0, g - 1)

    return grid[np.ix_(index(h, gh), index(w, gw))]


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8"))])


def patch_scores(patches: np.ndarray, ae, circuit=None, rng=None) -> np.ndarray:
    """Scores for a stack of patches; higher means more anomalous."""
    if circuit is None:
        return np.asarray(ae.anomaly_scores(patches, rng=rng), dtype=np.float64)
    z = ae.encode(patches)
    if z.shape[1] != circuit.num_vars:
        raise ValueError(f"encoder produces {z.shape[1]} features but the circuit models {circuit.num_vars}")
    return -circuit.log_likelihood(circuit.standardize(z))


def score_image(
    img: LabeledImage, ae, circuit=None, stride: int = DEFAULT_STRIDE, seed: int = 0
) -> HeatmapResult:
    """Score every stride-aligned window whose center lies in tissue.

    With a circuit the score is the negated log-likelihood of the
    standardised latent code; otherwise the autoencoder's own score.
    Stochastic scorers draw from a generator derived from ``seed`` and the
    image id, so results do not depend on scoring order.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if circuit is not None and getattr(ae, "latent_dim", circuit.num_vars) != circuit.num_vars:
        raise ValueError(f"autoencoder latent size {ae.latent_dim} != circuit variables {circuit.num_vars}")
    valid = valid_positions(img.tissue_mask, stride)
    rows, cols = grid_centers(img.shape, stride)
    scores = np.zeros(valid.shape)
    vr, vc = np.nonzero(valid)
    if len(vr):
        pixels = img.pixels
        patches = np.stack([patch_at(pixels, rows[i], cols[j]) for i, j in zip(vr, vc)])
        s = patch_scores(patches, ae, circuit, image_rng(seed, img.image_id))
        scores[vr, vc] = s
        scores[~valid] = s.min()
    return HeatmapResult(scores, valid, upsample_nearest(scores, img.shape, stride), stride)


def threshold_heatmap(hm: HeatmapResult, percentile: float = DEFAULT_PERCENTILE) -> np.ndarray:
    """Full-resolution segmentation of positions strictly above the percentile.

    The threshold comes from the image's own valid scores (linear
    interpolation between order statistics).  Also stored on ``hm``.
    """
    if not 0.0 < percentile < 100.0:
        raise ValueError("percentile must lie in (0, 100)")
    if not hm.valid.any():
        raise ValueError("heatmap has no valid positions")
    cut = np.percentile(hm.valid_scores(), percentile)
    grid = hm.valid & (hm.scores > cut)
    hm.segmentation = upsample_nearest(grid, hm.image_shape, hm.stride)
    return hm.segmentation


def grid_segmentation(hm: HeatmapResult, percentile: float = DEFAULT_PERCENTILE) -> np.ndarray:
    cut = np.percentile(hm.valid_scores(), percentile)
    return hm.valid & (hm.scores > cut)
