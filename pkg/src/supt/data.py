"""Dataset ingestion: IDX binary files and seeded synthetic generators."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_file(path) -> bytes:
    """Read a file, transparently inflating gzip (sniffed from the bytes)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] == b"\x1f\x8b":
        return gzip.decompress(buf)
    return buf


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def _read_be32(buf: bytes, offset: int) -> int:
    if offset + 4 > len(buf):
        raise ValueError("truncated IDX header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into float64 rows scaled to [0, 1]."""
    buf = _read_file(path)
    magic = _read_be32(buf, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise ValueError(f"bad IDX image magic 0x{magic:08x} in {path}")
    count = _read_be32(buf, 4)
    rows = _read_be32(buf, 8)
    cols = _read_be32(buf, 12)
    expected = 16 + count * rows * cols
    if len(buf) != expected:
        raise ValueError(f"IDX image file length {len(buf)} != {expected}")
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    buf = _read_file(path)
    magic = _read_be32(buf, 0)
    if magic != IDX_LABEL_MAGIC:
        raise ValueError(f"bad IDX label magic 0x{magic:08x} in {path}")
    count = _read_be32(buf, 4)
    if len(buf) != 8 + count:
        raise ValueError(f"IDX label file length {len(buf)} != {8 + count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx_dataset(images_path, labels_path):
    """Load one (images, labels) split, rejecting count mismatches."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"image count {images.shape[0]} != label count "
                         f"{labels.shape[0]}")
    return images, labels


def load_idx_train_test(train_images, train_labels, test_images, test_labels,
                        name: str = "idx") -> Dataset:
    xtr, ytr = load_idx_dataset(train_images, train_labels)
    xte, yte = load_idx_dataset(test_images, test_labels)
    return Dataset(name, xtr, ytr, xte, yte)


def synth_dataset(kind: str, n: int, classes: int, noise: float,
                  seed: int) -> Dataset:
    """Deterministic 2-D toy data with a fixed 80/20 train/test split."""
    if n < classes:
        raise ValueError("need at least one point per class")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 5])))
    labels = np.arange(n) % classes
    if kind == "blobs":
        angles = 2.0 * np.pi * labels / classes
        x = np.stack([2.5 * np.cos(angles), 2.5 * np.sin(angles)], axis=1)
        x += noise * rng.standard_normal((n, 2))
    elif kind == "spirals":
        t = rng.uniform(0.05, 1.0, size=n)
        theta = 2.0 * np.pi * (1.5 * t + labels / classes)
        r = 2.5 * t
        x = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        x += noise * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    order = rng.permutation(n)
    x, labels = x[order], labels[order]
    cut = int(0.8 * n)
    return Dataset(f"synth_{kind}", x[:cut], labels[:cut].astype(np.int64),
                   x[cut:], labels[cut:].astype(np.int64))
