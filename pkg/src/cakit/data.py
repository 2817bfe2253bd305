"""Synthetic image datasets and their binary file format.

The synthetic generator is a desk-scale stand-in for a large labeled image
corpus: each class is a fixed pattern of colored Gaussian blobs, each sample
is its class pattern plus pixel noise. Easy enough for a linear probe,
structured enough that channel gates have something to learn.

File format (little-endian):

  magic  b"CAKD"
  u32    version (1)
  u32    N, C, H, W, num_classes
  f32    N*C*H*W pixels
  u16    N labels

Pixels are stored as float32; the in-memory arrays are float64 holding
exactly float32-representable values, so a write/read round trip is the
identity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

DATASET_MAGIC = b"CAKD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")

_SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3}


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float64
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)


def synth_dataset(
    num_classes: int = 10,
    n_per_class: int = 50,
    size: int = 32,
    seed: int = 0,
    split: str = "train",
) -> Dataset:
    """Procedural class-conditional images, deterministic per (seed, split).

    Class patterns depend only on the seed, so train/val splits of the same
    seed share classes and differ only in samples and noise.
    """
    if split not in _SPLIT_STREAMS:
        raise ValueError(f"split must be one of {sorted(_SPLIT_STREAMS)}, got {split!r}")
    streams = np.random.SeedSequence(seed).spawn(4)
    template_rng = np.random.default_rng(streams[0])
    noise_rng = np.random.default_rng(streams[_SPLIT_STREAMS[split]])

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    templates = np.zeros((num_classes, 3, size, size))
    for cls in range(num_classes):
        for _ in range(3):
            cy, cx = template_rng.uniform(size * 0.2, size * 0.8, size=2)
            sigma = template_rng.uniform(size / 10.0, size / 5.0)
            amp = template_rng.uniform(-1.0, 1.0, size=3)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
            templates[cls] += amp[:, None, None] * blob

    n = num_classes * n_per_class
    images = np.zeros((n, 3, size, size))
    labels = np.zeros(n, dtype=np.int64)
    # interleave classes so any contiguous prefix is roughly stratified
    for i in range(n_per_class):
        for cls in range(num_classes):
            idx = i * num_classes + cls
            images[idx] = templates[cls] + 0.35 * noise_rng.standard_normal((3, size, size))
            labels[idx] = cls

    if n:
        mean = images.mean(axis=(0, 2, 3), keepdims=True)
        std = images.std(axis=(0, 2, 3), keepdims=True)
        images = (images - mean) / np.maximum(std, 1e-8)
    # quantize to float32 so file IO round-trips bitwise
    images = images.astype(np.float32).astype(np.float64)
    return Dataset(images=images, labels=labels, num_classes=num_classes, split=split)


def split_dataset(dataset: Dataset, holdout_every: int = 5) -> tuple[Dataset, Dataset]:
    """Deterministic train/val split: every ``holdout_every``-th sample is val."""
    if holdout_every < 2:
        raise ValueError("holdout_every must be >= 2")
    idx = np.arange(len(dataset))
    val_mask = idx % holdout_every == holdout_every - 1
    train = Dataset(
        images=dataset.images[~val_mask],
        labels=dataset.labels[~val_mask],
        num_classes=dataset.num_classes,
        split="train",
    )
    val = Dataset(
        images=dataset.images[val_mask],
        labels=dataset.labels[val_mask],
        num_classes=dataset.num_classes,
        split="val",
    )
    return train, val


def save_dataset(dataset: Dataset, path) -> None:
    n, c, h, w = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, c, h, w, dataset.num_classes))
        fh.write(dataset.images.astype("<f4").tobytes())
        fh.write(dataset.labels.astype("<u2").tobytes())


def load_dataset(path, split: str = "") -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise DataFormatError("bad magic: not a CAKD dataset file")
    if len(blob) < _HEADER.size:
        raise DataFormatError("truncated payload: incomplete header")
    _, version, n, c, h, w, num_classes = _HEADER.unpack_from(blob)
    if version != DATASET_VERSION:
        raise DataFormatError(f"unsupported dataset version {version}")
    pixel_bytes = n * c * h * w * 4
    expected = _HEADER.size + pixel_bytes + n * 2
    if len(blob) < expected:
        raise DataFormatError(
            f"truncated payload: need {expected} bytes, file has {len(blob)}"
        )
    if len(blob) > expected:
        raise DataFormatError(f"trailing bytes after payload: {len(blob) - expected}")
    images = (
        np.frombuffer(blob, dtype="<f4", count=n * c * h * w, offset=_HEADER.size)
        .reshape(n, c, h, w)
        .astype(np.float64)
    )
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=_HEADER.size + pixel_bytes).astype(
        np.int64
    )
    if labels.size and labels.max() >= num_classes:
        raise DataFormatError(
            f"label out of range: {labels.max()} with {num_classes} classes"
        )
    return Dataset(images=images, labels=labels, num_classes=num_classes, split=split)
