"""Dataset loading: bit-exact IDX parsing plus synthetic desk-scale tasks.

Real datasets are read from ``<data_dir>/<name>/{train,test}-{images,labels}.idx``
(the canonical MNIST file names are accepted as a fallback). Nothing is ever
downloaded. The synthetic generators guarantee the suite runs hermetically.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Prng

IMAGE_SIDE = 8  # synthetic rasters are 1 x 8 x 8


class DataError(Exception):
    """Base class for dataset problems."""


class IdxBadMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxSizeMismatchError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, C, H, W) float64 scaled to [0, 1]
    labels: np.ndarray  # (n,) int64
    name: str
    split: str
    num_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{self.name}/{self.split}: {len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"{self.name}/{self.split}: label outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte stream into a uint8 array.

    Header: two zero bytes, an element-type byte (0x08 = unsigned byte),
    a rank byte, then rank big-endian uint32 extents. Images carry magic
    0x00000803 (rank 3), labels 0x00000801 (rank 1).
    """
    if len(data) < 4:
        raise IdxTruncatedError(f"stream of {len(data)} bytes has no complete magic")
    zero0, zero1, dtype, rank = data[0], data[1], data[2], data[3]
    if zero0 != 0 or zero1 != 0 or dtype != 0x08:
        raise IdxBadMagicError(f"bad magic bytes {data[:4].hex()}")
    header_end = 4 + 4 * rank
    if len(data) < header_end:
        raise IdxTruncatedError(
            f"stream of {len(data)} bytes is too short for {rank} dimension fields"
        )
    dims = struct.unpack(f">{rank}I", data[4:header_end])
    expected = int(np.prod(dims)) if rank else 1
    payload = data[header_end:]
    if len(payload) != expected:
        raise IdxSizeMismatchError(
            f"payload holds {len(payload)} bytes but dims {dims} require {expected}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


_FALLBACK_NAMES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


def _idx_path(root: Path, split: str, kind: str) -> Path:
    primary = root / f"{split}-{kind}.idx"
    if primary.exists():
        return primary
    fallback = root / _FALLBACK_NAMES[(split, kind)]
    if fallback.exists():
        return fallback
    raise DataError(f"missing dataset file {primary}")


def load_idx_dataset(data_dir, name: str, split: str, num_classes: int = 10) -> Dataset:
    root = Path(data_dir) / name
    images_raw = parse_idx(_idx_path(root, split, "images").read_bytes())
    labels_raw = parse_idx(_idx_path(root, split, "labels").read_bytes())
    if images_raw.ndim == 3:
        images_raw = images_raw[:, None]
    elif images_raw.ndim != 4:
        raise DataError(f"image file rank {images_raw.ndim} unsupported")
    if labels_raw.ndim != 1:
        raise DataError(f"label file rank {labels_raw.ndim} unsupported")
    images = images_raw.astype(np.float64) / 255.0  # byte 0 -> 0.0, 255 -> 1.0
    return Dataset(images, labels_raw.astype(np.int64), name, split, num_classes)


def dataset_available(data_dir, name: str) -> bool:
    root = Path(data_dir) / name
    try:
        for split in ("train", "test"):
            for kind in ("images", "labels"):
                _idx_path(root, split, kind)
    except DataError:
        return False
    return True


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Seeded class-stratified sample of n items (largest-remainder counts)."""
    if n > len(ds):
        raise DataError(f"requested {n} items from a {len(ds)}-item dataset")
    rng = Prng(seed)
    per_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    total = len(ds)
    quotas = np.array([n * len(idx) / total for idx in per_class])
    counts = np.floor(quotas).astype(int)
    remainder = n - counts.sum()
    # hand the leftover slots to the largest fractional parts, ties by class id
    order = sorted(range(ds.num_classes), key=lambda c: (-(quotas[c] - counts[c]), c))
    for c in order[:remainder]:
        counts[c] += 1
    chosen = []
    for c, idx in enumerate(per_class):
        shuffled = rng.shuffle(idx)
        chosen.append(shuffled[: counts[c]])
    flat = np.concatenate(chosen) if chosen else np.array([], dtype=int)
    flat = rng.shuffle(flat)
    return Dataset(ds.images[flat], ds.labels[flat], ds.name, ds.split, ds.num_classes)


# ------------------------------------------------------------ synthetic tasks

RINGS_RADII = (1.6, 2.5)
RINGS_RADIAL_STD = 0.55
RINGS_BUMP_STD = 0.8
GAUSS_CLASSES = 10
GAUSS_RING_RADIUS = 2.6
GAUSS_CENTER_STD = 0.12
GAUSS_BUMP_STD = 0.6


def _raster_bump(px: float, py: float, bump_std: float) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE]
    return np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * bump_std**2))


def gen_synthetic(kind: str, n: int, seed: int) -> Dataset:
    """Deterministic synthetic image datasets.

    rings: two overlapping concentric annuli (not linearly separable in
    pixel space); gaussians: ten well-separated blob positions on a circle.
    """
    kind = kind.lower()
    if kind == "rings":
        classes = 2
    elif kind == "gaussians":
        classes = GAUSS_CLASSES
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if n < classes:
        raise DataError(f"need at least {classes} samples for {kind}, got {n}")
    rng = Prng(seed)
    center = (IMAGE_SIDE - 1) / 2.0
    images = np.empty((n, 1, IMAGE_SIDE, IMAGE_SIDE))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % classes
        if kind == "rings":
            radius = RINGS_RADII[label] + rng.normal((), std=RINGS_RADIAL_STD)
            angle = rng.uniform(0.0, 2.0 * np.pi, ())
            px = center + radius * np.cos(angle)
            py = center + radius * np.sin(angle)
            bump = RINGS_BUMP_STD
        else:
            angle = 2.0 * np.pi * label / classes
            px = center + GAUSS_RING_RADIUS * np.cos(angle) + rng.normal((), std=GAUSS_CENTER_STD)
            py = center + GAUSS_RING_RADIUS * np.sin(angle) + rng.normal((), std=GAUSS_CENTER_STD)
            bump = GAUSS_BUMP_STD
        images[i, 0] = _raster_bump(float(px), float(py), bump)
        labels[i] = label
    return Dataset(images, labels, kind, "train", classes)


def load_dataset(dataset: str, data_dir, split: str, seed: int = 0, n: int = 0) -> Dataset:
    """CLI-facing dispatch over real and synthetic datasets."""
    if dataset == "mnist":
        ds = load_idx_dataset(data_dir, "mnist", split)
    elif dataset in ("rings", "gaussians"):
        # synthetic test splits draw from a shifted seed so they are disjoint
        base = seed if split == "train" else seed + 104729
        size = n if n else (512 if split == "train" else 256)
        ds = gen_synthetic(dataset, size, base)
        return Dataset(ds.images, ds.labels, dataset, split, ds.num_classes)
    else:
        raise DataError(f"unknown dataset {dataset!r}")
    if n:
        ds = subset(ds, n, seed)
    return ds
