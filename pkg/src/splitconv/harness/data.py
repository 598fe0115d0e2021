"""Datasets: a procedurally rendered shape set and the CIFAR-10 binary format."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, FormatError, MissingDataError

__all__ = [
    "Dataset",
    "synth_dataset",
    "load_cifar10",
    "write_cifar10_records",
    "CIFAR_MEAN",
    "CIFAR_STD",
    "SYNTH_MEAN",
    "SYNTH_STD",
    "RECORD_BYTES",
    "DATA_DIR_ENV",
]

RECORD_BYTES = 3073
# per-channel statistics of the CIFAR-10 training set, pixel values in [0, 1]
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)
# fixed constants for the synthetic renderer (measured on 2000 images, seed 0)
SYNTH_MEAN = (0.336, 0.309, 0.319)
SYNTH_STD = (0.199, 0.201, 0.203)
DATA_DIR_ENV = "SPLITCONV_DATA"

CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, 32, 32), normalized
    labels: np.ndarray  # (n,) int64
    classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError(f"images must be 4-D, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise FormatError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels, self.classes)


def _normalize(img01: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    s = np.asarray(std, dtype=np.float64)[None, :, None, None]
    return (img01 - m) / s


# --- synthetic shapes ---------------------------------------------------------

_SHAPES = ("disk", "square", "cross", "hbar", "triangle", "ring", "vbar", "diamond", "checker", "diag")


def _mask(shape: str, xx, yy, size) -> np.ndarray:
    ax, ay = np.abs(xx), np.abs(yy)
    if shape == "disk":
        return xx**2 + yy**2 <= size**2
    if shape == "square":
        return np.maximum(ax, ay) <= size
    if shape == "triangle":
        return (yy <= size) & (yy >= 2 * ax - size)
    if shape == "cross":
        t = size / 3
        return ((ax <= t) & (ay <= size)) | ((ay <= t) & (ax <= size))
    if shape == "ring":
        r2 = xx**2 + yy**2
        return (r2 <= size**2) & (r2 >= (0.55 * size) ** 2)
    if shape == "hbar":
        return (ay <= size / 3) & (ax <= size * 1.3)
    if shape == "vbar":
        return (ax <= size / 3) & (ay <= size * 1.3)
    if shape == "diamond":
        return ax + ay <= size
    if shape == "checker":
        cell = max(size / 2, 1.5)
        inside = np.maximum(ax, ay) <= size
        return inside & ((np.floor(xx / cell) + np.floor(yy / cell)) % 2 == 0)
    # diag: thick anti-diagonal stripe
    return (np.abs(xx - yy) <= size / 2.5) & (np.maximum(ax, ay) <= size)


def synth_dataset(seed: int, n: int, classes: int = 4, size: int = 32) -> Dataset:
    """Render ``n`` images where the class decides the geometric shape.

    Position, scale, foreground/background colours and pixel noise are
    random per image.  Labels are balanced within one and the whole set is a
    pure function of ``seed``.
    """
    if not 2 <= classes <= len(_SHAPES):
        raise ValueError(f"classes must be in [2, {len(_SHAPES)}], got {classes}")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, 3, size, size))
    for i, lab in enumerate(labels):
        scale = rng.uniform(0.18, 0.32) * size
        cx, cy = rng.uniform(scale, size - scale, 2)
        mask = _mask(_SHAPES[lab], xx - cx, yy - cy, scale)
        bg = rng.uniform(0.05, 0.45, 3)
        fg = bg + rng.uniform(0.3, 0.5, 3)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        img += rng.normal(0.0, 0.06, img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(_normalize(images, SYNTH_MEAN, SYNTH_STD), labels, classes)


# --- CIFAR-10 binary ----------------------------------------------------------


def _parse_records(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise FormatError(f"{path}: size {raw.size} is not a positive multiple of {RECORD_BYTES}")
    rec = raw.reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CorruptionError(f"{path}: record {bad[0]} has label byte {labels[bad[0]]} > 9")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32)
    return pixels, labels


def load_cifar10(path, split: str = "train", normalize: bool = True) -> Dataset:
    """Read CIFAR-10 binary batches from a directory or a single ``.bin`` file.

    Each record is one label byte followed by the R, G and B planes of a
    row-major 32x32 image.  ``split`` selects the train or test batch files
    when ``path`` is a directory.  Pixels are scaled to [0, 1] and then
    standardised with :data:`CIFAR_MEAN` / :data:`CIFAR_STD`.
    """
    path = Path(path)
    if path.is_file():
        files = [path]
    elif path.is_dir():
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        files = [path / f for f in names if (path / f).is_file()]
        if not files:
            raise MissingDataError(f"no CIFAR-10 {split} batches ({', '.join(names)}) in {path}")
    else:
        raise MissingDataError(f"CIFAR-10 path {path} does not exist")
    parts = [_parse_records(f) for f in files]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([l for _, l in parts])
    images = pixels.astype(np.float64) / 255.0
    if normalize:
        images = _normalize(images, CIFAR_MEAN, CIFAR_STD)
    return Dataset(images, labels, 10)


def write_cifar10_records(path, pixels: np.ndarray, labels) -> None:
    """Write uint8 ``pixels`` of shape ``(n, 3, 32, 32)`` in CIFAR-10 record layout."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    rec = np.concatenate([labels[:, None], pixels.reshape(len(labels), -1)], axis=1)
    Path(path).write_bytes(rec.tobytes())


def default_data_dir() -> Path | None:
    v = os.environ.get(DATA_DIR_ENV)
    return Path(v) if v else None
