"""Seeded synthetic mammogram-like images with ground-truth masks.

Tissue is a smooth random field inside a half-ellipse attached to the left
image border, over a dark background.  Mass images add one to three
blurred bright ellipses; calcification images add a cluster of small bright
speckles whose annotation is a disk around the whole cluster.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import read_pgm, write_pgm

LABELS = ("healthy", "mass", "calcification")
IMAGES_PER_SUBJECT = 2
MIN_IMAGE_SIZE = 128
# generator constants (normalised intensity units)
TISSUE_LEVEL = (0.40, 0.45)  # per-image mean tissue intensity
COARSE_TEXTURE = 0.04  # amplitude of the slowly varying density field
FINE_TEXTURE = (0.04, 0.14)  # range of fine-texture amplitude across the tissue
DENSE_CONTRAST = (0.06, 0.14)  # brightness of healthy dense islands above the tissue level
MASS_CONTRAST = (0.30, 0.40)  # plateau brightness above the median tissue level
TISSUE_HEIGHT = (0.55, 0.65)  # half-ellipse semi-axes as fractions of the image size
TISSUE_WIDTH = (0.70, 0.78)


@dataclass
class LabeledImage:
    image: np.ndarray  # uint8 or uint16 grayscale
    tissue_mask: np.ndarray  # bool
    anomaly_mask: np.ndarray  # bool, subset of tissue_mask
    subject_id: str
    image_id: str
    label: str = "healthy"

    def __post_init__(self):
        self.tissue_mask = np.asarray(self.tissue_mask, dtype=bool)
        self.anomaly_mask = np.asarray(self.anomaly_mask, dtype=bool)
        if not (self.image.shape == self.tissue_mask.shape == self.anomaly_mask.shape):
            raise ValueError("image and masks must share dimensions")
        if np.any(self.anomaly_mask & ~self.tissue_mask):
            raise ValueError(f"{self.image_id}: anomaly mask extends outside the tissue mask")

    @property
    def pixels(self) -> np.ndarray:
        """Intensities scaled to [0, 1] by the image's bit depth."""
        return self.image.astype(np.float64) / np.iinfo(self.image.dtype).max

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return (f - f.mean()) / (f.std() + 1e-12)


def _tissue(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size * (0.5 + rng.uniform(-0.04, 0.04))
    ry = size * rng.uniform(*TISSUE_HEIGHT)
    rx = size * rng.uniform(*TISSUE_WIDTH)
    mask = ((yy - cy) / ry) ** 2 + (xx / rx) ** 2 <= 1.0
    depth = ndimage.distance_transform_edt(mask)
    base = rng.uniform(*TISSUE_LEVEL)
    # coarse density variation plus fine texture whose strength varies in space
    coarse = COARSE_TEXTURE * _smooth_field(rng, mask.shape, 8.0)
    strength = FINE_TEXTURE[0] + (FINE_TEXTURE[1] - FINE_TEXTURE[0]) / (1.0 + np.exp(-2.0 * _smooth_field(rng, mask.shape, 10.0)))
    fine = strength * _smooth_field(rng, mask.shape, 1.0)
    # healthy dense islands: diffuse bright regions where a smooth field is high
    islands = ndimage.gaussian_filter((_smooth_field(rng, mask.shape, 7.0) > 1.0).astype(np.float64), 3.0)
    dense = rng.uniform(*DENSE_CONTRAST) * islands
    skin = np.sqrt(np.clip(depth / 12.0, 0.0, 1.0))
    img = np.where(mask, (base + coarse + dense + fine * (1.0 - 0.6 * islands)) * skin, 0.0)
    img = img + 0.03 + 0.01 * rng.standard_normal(mask.shape)
    return img, mask, depth


def _place_center(rng, depth, margin, size, lo=32):
    hi = size - lo
    ok = depth > margin
    window = np.zeros_like(ok)
    window[lo : hi + 1, lo : hi + 1] = True
    cand = np.argwhere(ok & window)
    if len(cand) == 0:
        cand = np.argwhere(ok)
    if len(cand) == 0:
        cand = np.argwhere(depth > 0)
    return cand[rng.integers(len(cand))].astype(np.float64)


def _add_masses(rng, img, tissue, depth):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    anomaly = np.zeros_like(tissue)
    for _ in range(rng.integers(1, 4)):
        ry, rx = rng.uniform(8, 24, size=2)
        theta = rng.uniform(0, np.pi)
        cy, cx = _place_center(rng, depth, max(ry, rx) + 2, size)
        dy, dx = yy - cy, xx - cx
        u = (dy * np.cos(theta) + dx * np.sin(theta)) / ry
        v = (-dy * np.sin(theta) + dx * np.cos(theta)) / rx
        ellipse = u**2 + v**2 <= 1.0
        blob = ndimage.gaussian_filter(ellipse.astype(np.float64), rng.uniform(2.0, 3.0))
        # dense, homogeneous lesion: blend towards a bright plateau
        level = np.median(img[tissue]) + rng.uniform(*MASS_CONTRAST)
        img[...] = (1.0 - blob) * img + blob * level
        anomaly |= ellipse
    return anomaly & tissue


def _add_calcifications(rng, img, tissue, depth):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    radius = rng.uniform(6, 14)
    cy, cx = _place_center(rng, depth, radius + 4, size)
    specks = np.zeros_like(img)
    for _ in range(rng.integers(3, 11)):
        r = np.sqrt(rng.uniform(0, 1)) * radius
        a = rng.uniform(0, 2 * np.pi)
        sy, sx = cy + r * np.sin(a), cx + r * np.cos(a)
        rad = rng.uniform(1.0, 3.0)
        disk = (yy - sy) ** 2 + (xx - sx) ** 2 <= rad**2
        specks = np.maximum(specks, rng.uniform(0.25, 0.45) * disk)
    img += ndimage.gaussian_filter(specks, 0.5)
    cluster = (yy - cy) ** 2 + (xx - cx) ** 2 <= (radius + 4) ** 2
    return cluster & tissue


def make_image(label: str, image_size: int, rng: np.random.Generator, subject_id: str, image_id: str) -> LabeledImage:
    img, tissue, depth = _tissue(rng, image_size)
    anomaly = np.zeros_like(tissue)
    if label == "mass":
        anomaly = _add_masses(rng, img, tissue, depth)
    elif label == "calcification":
        anomaly = _add_calcifications(rng, img, tissue, depth)
    elif label != "healthy":
        raise ValueError(f"unknown label {label!r}")
    pixels = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    return LabeledImage(pixels, tissue, anomaly, subject_id, image_id, label)


def make_synthetic_dataset(
    n_healthy: int, n_mass: int = 0, n_calc: int = 0, image_size: int = 128, seed: int = 0
) -> list[LabeledImage]:
    """Generate images deterministically; each image has its own derived seed.

    Consecutive pairs of images within a class share a subject id.
    """
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be >= {MIN_IMAGE_SIZE}")
    images = []
    for code, (label, count, prefix) in enumerate(
        (("healthy", n_healthy, "H"), ("mass", n_mass, "M"), ("calcification", n_calc, "C"))
    ):
        for i in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(code, i)))
            subject = f"{prefix}{i // IMAGES_PER_SUBJECT:04d}"
            images.append(make_image(label, image_size, rng, subject, f"{prefix}{i:05d}"))
    return images


# --- on-disk dataset --------------------------------------------------------

MANIFEST_FIELDS = ("subject_id", "image_id", "image", "tissue_mask", "anomaly_mask", "label")


def write_dataset(images: list[LabeledImage], root) -> Path:
    """Write P5 images/masks plus ``manifest.csv``; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_FIELDS)
        for im in images:
            paths = (f"images/{im.image_id}.pgm", f"masks/{im.image_id}_tissue.pgm", f"masks/{im.image_id}_anomaly.pgm")
            write_pgm(root / paths[0], im.image)
            write_pgm(root / paths[1], im.tissue_mask.astype(np.uint8) * 255)
            write_pgm(root / paths[2], im.anomaly_mask.astype(np.uint8) * 255)
            w.writerow((im.subject_id, im.image_id) + paths + (im.label,))
    return manifest


def read_dataset(manifest) -> list[LabeledImage]:
    manifest = Path(manifest)
    root = manifest.parent
    images = []
    with open(manifest, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{manifest}: missing columns {sorted(missing)}")
        for row in reader:
            images.append(
                LabeledImage(
                    read_pgm(root / row["image"]),
                    read_pgm(root / row["tissue_mask"]) > 0,
                    read_pgm(root / row["anomaly_mask"]) > 0,
                    row["subject_id"],
                    row["image_id"],
                    row["label"],
                )
            )
    return images
