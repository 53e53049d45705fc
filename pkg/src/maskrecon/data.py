"""Dataset ingestion: IDX image/label files and a synthetic low-rank generator."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CountMismatchError,
    DataFormatError,
    InvalidRangeError,
    TruncatedDataError,
)
from .estimation import ImageTensor, from_wide_matrix
from .masking import derive_seed, rng_from_seed
from .pipeline import Dataset

__all__ = ["SyntheticSpec", "load_idx", "gen_synthetic"]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801

_TAG_FACTORS = 301
_TAG_WEIGHTS = 302
_TAG_NOISE = 303


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _take(blob: bytes, offset: int, n: int, what: str, path) -> bytes:
    if offset + n > len(blob):
        raise TruncatedDataError(f"{path}: truncated while reading {what}")
    return blob[offset: offset + n]


def _parse_images(path):
    blob = _read_bytes(path)
    (magic,) = struct.unpack(">I", _take(blob, 0, 4, "magic", path))
    if magic != _IMAGE_MAGIC:
        raise DataFormatError(
            f"{path}: bad image magic 0x{magic:08x}, expected 0x{_IMAGE_MAGIC:08x}"
        )
    count, rows, cols = struct.unpack(">III", _take(blob, 4, 12, "dimensions", path))
    payload = _take(blob, 16, count * rows * cols, "pixel data", path)
    if len(blob) != 16 + count * rows * cols:
        raise DataFormatError(f"{path}: {len(blob) - 16 - count * rows * cols} trailing bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    return pixels.astype(np.float64) / 255.0


def _parse_labels(path):
    blob = _read_bytes(path)
    (magic,) = struct.unpack(">I", _take(blob, 0, 4, "magic", path))
    if magic != _LABEL_MAGIC:
        raise DataFormatError(
            f"{path}: bad label magic 0x{magic:08x}, expected 0x{_LABEL_MAGIC:08x}"
        )
    (count,) = struct.unpack(">I", _take(blob, 4, 4, "count", path))
    payload = _take(blob, 8, count, "labels", path)
    if len(blob) != 8 + count:
        raise DataFormatError(f"{path}: {len(blob) - 8 - count} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image (magic 0x803) and label (0x801) files.

    Pixels are scaled by 1/255 so byte 255 maps to exactly 1.0. Transparently
    decompresses gzip. Image and label counts must agree.
    """
    pixels = _parse_images(images_path)
    labels = _parse_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{pixels.shape[0]} images in {images_path} but "
            f"{labels.shape[0]} labels in {labels_path}"
        )
    images = tuple(ImageTensor(data=pixels[i][:, :, None]) for i in range(pixels.shape[0]))
    return Dataset(images=images, labels=tuple(int(y) for y in labels))


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank labeled image generator: images are positive rank-`rank`
    combinations drawn from class-specific factor pools, rescaled into [0, 1]
    by their maximum (rank-preserving), plus optional clipped Gaussian noise."""

    count: int
    height: int
    width: int
    channels: int = 1
    rank: int = 1
    noise_sigma: float = 0.0
    classes: int = 2

    def __post_init__(self):
        if self.count < 1:
            raise InvalidRangeError(f"count must be >= 1, got {self.count}")
        if self.height < 1 or self.width < 1:
            raise InvalidRangeError(f"dimensions must be positive, got {self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise InvalidRangeError(f"channels must be 1 or 3, got {self.channels}")
        if not 1 <= self.rank <= min(self.height, self.width * self.channels):
            raise InvalidRangeError(
                f"rank must be in [1, {min(self.height, self.width * self.channels)}], "
                f"got {self.rank}"
            )
        if self.noise_sigma < 0:
            raise InvalidRangeError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.classes < 1:
            raise InvalidRangeError(f"classes must be >= 1, got {self.classes}")


def gen_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Deterministic labeled low-rank dataset; labels cycle round-robin."""
    wide_cols = spec.width * spec.channels
    pools = []
    for c in range(spec.classes):
        rng = rng_from_seed(derive_seed(seed, _TAG_FACTORS, c))
        u = rng.uniform(0.1, 1.0, size=(spec.height, spec.rank))
        v = rng.uniform(0.1, 1.0, size=(wide_cols, spec.rank))
        pools.append((u, v))

    images, labels = [], []
    for i in range(spec.count):
        c = i % spec.classes
        u, v = pools[c]
        rng = rng_from_seed(derive_seed(seed, _TAG_WEIGHTS, i))
        s = rng.uniform(0.5, 1.5, size=spec.rank)
        wide = (u * s) @ v.T
        wide = wide / wide.max()
        if spec.noise_sigma > 0:
            noise_rng = rng_from_seed(derive_seed(seed, _TAG_NOISE, i))
            wide = np.clip(
                wide + noise_rng.normal(0.0, spec.noise_sigma, size=wide.shape), 0.0, 1.0
            )
        images.append(from_wide_matrix(wide, spec.channels))
        labels.append(c)
    return Dataset(images=tuple(images), labels=tuple(labels))
