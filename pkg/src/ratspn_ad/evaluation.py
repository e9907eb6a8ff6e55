"""Detection and segmentation metrics and score-distribution export."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half.  Computed from average ranks (Mann-Whitney U).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0 or 1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average 1-based rank per tie group
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_s)) + 1]
    ends = np.r_[starts[1:], len(s)]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(s))
    ranks[order] = np.repeat(avg, ends - starts)
    # U statistic in exact arithmetic where possible: rank sums are multiples of 1/2
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ScoredPixelSet:
    image_id: str
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel().astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise MetricError(f"{self.image_id}: scores and labels differ in length")
        if len(self.scores) == 0:
            raise MetricError(f"{self.image_id}: no positions")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise MetricError(f"{self.image_id}: labels must be 0 or 1")

    @property
    def single_class(self) -> bool:
        return self.labels.min() == self.labels.max()


def pixelwise_auc(sets) -> float:
    sets = list(sets)
    return auc(np.concatenate([s.scores for s in sets]), np.concatenate([s.labels for s in sets]))


@dataclass
class ImagewiseAuc:
    mean: float
    std: float
    per_image: dict = field(default_factory=dict)
    skipped: int = 0

    def __iter__(self):
        return iter((self.mean, self.std))


def imagewise_auc(sets) -> ImagewiseAuc:
    """Mean and population std of per-image AUCs; single-class images are skipped."""
    per_image, skipped = {}, 0
    for s in sets:
        if s.single_class:
            skipped += 1
            logger.warning("skipping %s: only one class present", s.image_id)
            continue
        per_image[s.image_id] = auc(s.scores, s.labels)
    if not per_image:
        raise MetricError("every image is single-class")
    vals = np.array(list(per_image.values()))
    return ImagewiseAuc(float(vals.mean()), float(vals.std()), per_image, skipped)


def _directed(a: np.ndarray, b: np.ndarray) -> float:
    """max over a of the distance to the nearest pixel of b."""
    dist = ndimage.distance_transform_edt(~b)
    return float(dist[a].max())


def hausdorff(pred_mask, gt_mask) -> float:
    """Symmetric Hausdorff distance in pixels between two binary masks."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise MetricError("masks differ in shape")
    if not a.any() or not b.any():
        raise MetricError("Hausdorff distance needs two nonempty masks")
    return max(_directed(a, b), _directed(b, a))


def hausdorff_or_diagonal(pred_mask, gt_mask) -> tuple[float, bool]:
    """Hausdorff distance, or the image diagonal when a mask is empty.

    The flag is True when the fallback was used.
    """
    try:
        return hausdorff(pred_mask, gt_mask), False
    except MetricError:
        h, w = np.shape(pred_mask)
        return math.hypot(h, w), True


# --- score distributions ----------------------------------------------------


def gap_statistic(healthy, anomalous) -> float:
    """Difference of class medians divided by the pooled interquartile range."""
    h = np.asarray(healthy, dtype=np.float64)
    a = np.asarray(anomalous, dtype=np.float64)
    if h.size == 0 or a.size == 0:
        raise MetricError("both score classes must be nonempty")
    q75, q25 = np.percentile(np.concatenate([h, a]), [75, 25])
    iqr = q75 - q25
    diff = float(np.median(a) - np.median(h))
    if iqr <= 0:
        return math.copysign(math.inf, diff) if diff else 0.0
    return diff / iqr


@dataclass
class ScoreHistogram:
    edges: np.ndarray
    healthy_counts: np.ndarray
    anomalous_counts: np.ndarray
    gap: float

    def rows(self):
        for i in range(len(self.healthy_counts)):
            yield self.edges[i], self.edges[i + 1], int(self.healthy_counts[i]), int(self.anomalous_counts[i])


def score_histograms(healthy, anomalous, bins: int = 50) -> ScoreHistogram:
    h = np.asarray(healthy, dtype=np.float64).ravel()
    a = np.asarray(anomalous, dtype=np.float64).ravel()
    if h.size == 0 or a.size == 0:
        raise MetricError("both score classes must be nonempty")
    lo = min(h.min(), a.min())
    hi = max(h.max(), a.max())
    edges = np.histogram_bin_edges(np.r_[lo, hi], bins=bins, range=(lo, hi) if hi > lo else (lo - 0.5, hi + 0.5))
    hc, _ = np.histogram(h, edges)
    ac, _ = np.histogram(a, edges)
    return ScoreHistogram(edges, hc, ac, gap_statistic(h, a))


def export_score_histograms(healthy, anomalous, bins: int = 50, path=None) -> ScoreHistogram:
    """Shared-range equal-width histograms of both classes, optionally as CSV."""
    hist = score_histograms(healthy, anomalous, bins)
    if path is not None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_left", "bin_right", "healthy_count", "anomalous_count"])
            for left, right, hc, ac in hist.rows():
                w.writerow([repr(float(left)), repr(float(right)), hc, ac])
            w.writerow([])
            w.writerow(["gap_statistic", repr(hist.gap)])
    return hist


# --- report -----------------------------------------------------------------


@dataclass
class ImageMetrics:
    image_id: str
    auc: float | None
    hausdorff: float
    hausdorff_fallback: bool


@dataclass
class MetricsReport:
    model: str
    pixelwise_auc: float
    imagewise_auc_mean: float
    imagewise_auc_std: float
    hausdorff_mean: float
    hausdorff_std: float
    skipped_images: int = 0
    fallback_images: int = 0
    per_image: list[ImageMetrics] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"model = {self.model}",
            f"pixelwise_auc = {self.pixelwise_auc:.6f}",
            f"imagewise_auc_mean = {self.imagewise_auc_mean:.6f}",
            f"imagewise_auc_std = {self.imagewise_auc_std:.6f}",
            f"hausdorff_mean = {self.hausdorff_mean:.6f}",
            f"hausdorff_std = {self.hausdorff_std:.6f}",
            f"images = {len(self.per_image)}",
            f"skipped_single_class = {self.skipped_images}",
            f"hausdorff_diagonal_fallbacks = {self.fallback_images}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, text_path, csv_path=None) -> None:
        with open(text_path, "w") as f:
            f.write(self.to_text())
        if csv_path is not None:
            with open(csv_path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["image_id", "auc", "hausdorff", "hausdorff_fallback"])
                for m in self.per_image:
                    w.writerow([m.image_id, "" if m.auc is None else f"{m.auc:.6f}", f"{m.hausdorff:.6f}", int(m.hausdorff_fallback)])


def evaluate(sets, predictions, ground_truths, model: str = "") -> MetricsReport:
    """Aggregate metrics over images.

    ``sets`` are per-image :class:`ScoredPixelSet` objects; ``predictions``
    and ``ground_truths`` are the matching full-resolution binary masks.
    """
    sets = list(sets)
    iw = imagewise_auc(sets)
    per_image, dists, fallbacks = [], [], 0
    for s, pred, gt in zip(sets, predictions, ground_truths, strict=True):
        d, fb = hausdorff_or_diagonal(pred, gt)
        fallbacks += fb
        dists.append(d)
        per_image.append(ImageMetrics(s.image_id, iw.per_image.get(s.image_id), d, fb))
    dists = np.array(dists)
    return MetricsReport(
        model,
        pixelwise_auc(sets),
        iw.mean,
        iw.std,
        float(dists.mean()),
        float(dists.std()),
        iw.skipped,
        fallbacks,
        per_image,
    )
