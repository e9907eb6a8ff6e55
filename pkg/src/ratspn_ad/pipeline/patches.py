"""Patch sampling from tissue interior and contour, and subject-level splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .. import tensorio
from .synthetic import LabeledImage

PATCH_SIZE = 64
HALF = PATCH_SIZE // 2
CONTOUR_BAND = 8
DEFAULT_PATCHES_PER_IMAGE = 120


class InsufficientCandidatesError(RuntimeError):
    pass


@dataclass
class Provenance:
    image_id: str
    row: int  # patch center
    col: int
    region: str  # "interior" or "contour"


@dataclass
class PatchSet:
    patches: np.ndarray  # (n, 64, 64) float64 in [0, 1]
    provenance: list[Provenance] = field(default_factory=list)

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64).reshape(-1, PATCH_SIZE, PATCH_SIZE)
        if len(self.patches) != len(self.provenance):
            raise ValueError("one provenance record per patch is required")

    def __len__(self) -> int:
        return len(self.patches)

    @classmethod
    def concat(cls, sets) -> "PatchSet":
        sets = list(sets)
        if not sets:
            return cls(np.zeros((0, PATCH_SIZE, PATCH_SIZE)), [])
        return cls(np.concatenate([s.patches for s in sets]), [p for s in sets for p in s.provenance])

    def save(self, tensor_path, csv_path) -> None:
        tensorio.save_tensor(tensor_path, self.patches, tensorio.FLOAT32)
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "image_id", "row", "col", "region"])
            for i, p in enumerate(self.provenance):
                w.writerow([i, p.image_id, p.row, p.col, p.region])

    @classmethod
    def load(cls, tensor_path, csv_path) -> "PatchSet":
        patches = tensorio.load_tensor(tensor_path)
        with open(csv_path, newline="") as f:
            prov = [Provenance(r["image_id"], int(r["row"]), int(r["col"]), r["region"]) for r in csv.DictReader(f)]
        return cls(patches, prov)


def boundary_distance(tissue_mask: np.ndarray) -> np.ndarray:
    """Signed distance to the tissue boundary (positive inside, negative outside)."""
    m = np.asarray(tissue_mask, dtype=bool)
    return ndimage.distance_transform_edt(m) - ndimage.distance_transform_edt(~m)


def candidate_centers(tissue_mask: np.ndarray, band: int = CONTOUR_BAND) -> tuple[np.ndarray, np.ndarray]:
    """Boolean maps of admissible interior and contour patch centers.

    Interior centers lie in tissue eroded by ``band``; contour centers lie
    within ``band`` pixels of the boundary on either side.  Both require the
    whole 64x64 window to fit in the image.
    """
    h, w = tissue_mask.shape
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise ValueError(f"image {h}x{w} is smaller than a {PATCH_SIZE}x{PATCH_SIZE} patch")
    d = boundary_distance(tissue_mask)
    fits = np.zeros((h, w), dtype=bool)
    fits[HALF : h - HALF + 1, HALF : w - HALF + 1] = True
    interior = fits & (d > band)
    contour = fits & (np.abs(d) <= band)
    return interior, contour


def patch_at(pixels: np.ndarray, row: int, col: int) -> np.ndarray:
    return pixels[row - HALF : row + HALF, col - HALF : col + HALF]


def extract_patches(
    img: LabeledImage,
    n_per_image: int = DEFAULT_PATCHES_PER_IMAGE,
    rng: np.random.Generator | None = None,
    band: int = CONTOUR_BAND,
    reject_anomalies: bool = True,
) -> PatchSet:
    """Sample ``ceil(n/2)`` interior and ``floor(n/2)`` contour patches."""
    if not img.tissue_mask.any():
        raise ValueError(f"{img.image_id}: empty tissue mask")
    rng = rng if rng is not None else np.random.default_rng(0)
    interior, contour = candidate_centers(img.tissue_mask, band)
    pixels = img.pixels
    if reject_anomalies and img.anomaly_mask.any():
        clean = _window_clean(img.anomaly_mask)
        interior &= clean
        contour &= clean
    patches, prov = [], []
    for region, cand, count in (
        ("interior", interior, math.ceil(n_per_image / 2)),
        ("contour", contour, n_per_image // 2),
    ):
        if count == 0:
            continue
        rows, cols = np.nonzero(cand)
        if len(rows) == 0:
            raise InsufficientCandidatesError(f"{img.image_id}: no admissible {region} centers")
        pick = rng.integers(len(rows), size=count)
        for k in pick:
            r, c = int(rows[k]), int(cols[k])
            patches.append(patch_at(pixels, r, c))
            prov.append(Provenance(img.image_id, r, c, region))
    return PatchSet(np.array(patches).reshape(-1, PATCH_SIZE, PATCH_SIZE), prov)


def _window_clean(anomaly_mask: np.ndarray) -> np.ndarray:
    """True at centers whose 64x64 window contains no anomalous pixel."""
    a = np.asarray(anomaly_mask, dtype=np.int64)
    h, w = a.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = a.cumsum(0).cumsum(1)
    clean = np.zeros((h, w), dtype=bool)
    r = np.arange(HALF, h - HALF + 1)
    c = np.arange(HALF, w - HALF + 1)
    r0, c0 = (r - HALF)[:, None], (c - HALF)[None, :]
    r1, c1 = (r + HALF)[:, None], (c + HALF)[None, :]
    total = integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    clean[HALF : h - HALF + 1, HALF : w - HALF + 1] = total == 0
    return clean


def extract_dataset_patches(images, n_per_image: int = DEFAULT_PATCHES_PER_IMAGE, seed: int = 0, **kw) -> PatchSet:
    sets = []
    for i, img in enumerate(images):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        sets.append(extract_patches(img, n_per_image, rng, **kw))
    return PatchSet.concat(sets)


def split_dataset(images, train_frac: float = 0.9, seed: int = 0):
    """Split by subject so no subject contributes to both sides."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    subjects = sorted({im.subject_id for im in images})
    if len(subjects) < 2:
        raise ValueError("need at least two subjects to split")
    n_train = min(max(int(round(train_frac * len(subjects))), 1), len(subjects) - 1)
    order = np.random.default_rng(seed).permutation(len(subjects))
    train_ids = {subjects[i] for i in order[:n_train]}
    train = [im for im in images if im.subject_id in train_ids]
    val = [im for im in images if im.subject_id not in train_ids]
    return train, val
