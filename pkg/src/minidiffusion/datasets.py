"""Bit-exact readers (and writers, for fixtures) of MNIST IDX and CIFAR-10 binaries."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Rng

IDX_IMAGE_MAGIC = 2051  # 0x00000803
IDX_LABEL_MAGIC = 2049  # 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixels
CIFAR_CLASSES = 10


class DataFormatError(ValueError):
    """Malformed dataset container (bad magic, wrong kind, truncation)."""


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def read_idx_images(path) -> np.ndarray:
    """IDX image file -> uint8 array (count, rows, cols). Big-endian header."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, "IDX image header"))
        if magic == IDX_LABEL_MAGIC:
            raise DataFormatError(f"wrong IDX kind: {path} is a label file, expected images")
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(f"bad IDX image magic {magic} (expected {IDX_IMAGE_MAGIC})")
        payload = _read_exact(f, count * rows * cols, "IDX image payload")
        if f.read(1):
            raise DataFormatError(f"trailing bytes after {count} images in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """IDX label file -> uint8 array (count,)."""
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, "IDX label header"))
        if magic == IDX_IMAGE_MAGIC:
            raise DataFormatError(f"wrong IDX kind: {path} is an image file, expected labels")
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(f"bad IDX label magic {magic} (expected {IDX_LABEL_MAGIC})")
        payload = _read_exact(f, count, "IDX label payload")
        if f.read(1):
            raise DataFormatError(f"trailing bytes after {count} labels in {path}")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def read_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """One CIFAR-10 binary batch -> (images uint8 (N, 3, 32, 32), labels uint8 (N,))."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max(initial=0) >= CIFAR_CLASSES:
        raise DataFormatError(f"{path}: label byte {labels.max()} out of range [0, {CIFAR_CLASSES})")
    images = records[:, 1:].reshape(-1, 3, 32, 32)  # channel-planar R, G, B
    return images.copy(), labels.copy()


def read_cifar10(paths) -> tuple[np.ndarray, np.ndarray]:
    parts = [read_cifar10_batch(p) for p in paths]
    if not parts:
        raise DataFormatError("no CIFAR-10 batch files given")
    images = np.concatenate([im for im, _ in parts])
    labels = np.concatenate([lb for _, lb in parts])
    return images, labels


def write_cifar10_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(records.tobytes())


def normalize_images(images_u8: np.ndarray) -> np.ndarray:
    """Byte range [0, 255] -> float32 [-1, 1]."""
    return (images_u8.astype(np.float32) / 127.5) - 1.0


@dataclass
class DatasetHandle:
    """In-memory dataset: images in [-1, 1], NCHW, with optional labels."""

    name: str
    images: np.ndarray  # float32 (N, C, H, W)
    labels: np.ndarray | None  # int64 (N,) or None
    class_count: int | None

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def batches(self, batch_size: int, seed: int):
        """One full seeded-shuffle pass; every sample appears exactly once."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        order = Rng(seed).permutation(len(self.images))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            labels = self.labels[idx] if self.labels is not None else None
            yield self.images[idx], labels


def load_dataset(name: str, data_dir, limit: int | None = None) -> DatasetHandle:
    """Load a named dataset from its native binary files under data_dir.

    mnist / fashion-mnist expect train-images-idx3-ubyte and
    train-labels-idx1-ubyte; cifar10 expects data_batch_*.bin (or any *.bin).
    """
    data_dir = Path(data_dir)
    if name in ("mnist", "fashion-mnist"):
        images_u8 = read_idx_images(data_dir / "train-images-idx3-ubyte")
        labels_u8 = read_idx_labels(data_dir / "train-labels-idx1-ubyte")
        if len(images_u8) != len(labels_u8):
            raise DataFormatError(
                f"image/label count mismatch: {len(images_u8)} vs {len(labels_u8)}"
            )
        images = normalize_images(images_u8)[:, None, :, :]  # grayscale -> 1 channel
        labels = labels_u8.astype(np.int64)
    elif name == "cifar10":
        paths = sorted(data_dir.glob("data_batch_*.bin")) or sorted(data_dir.glob("*.bin"))
        images_u8, labels_u8 = read_cifar10(paths)
        images = normalize_images(images_u8)
        labels = labels_u8.astype(np.int64)
    else:
        raise ValueError(f"unknown dataset {name!r} (expected mnist, fashion-mnist, cifar10)")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return DatasetHandle(name=name, images=images, labels=labels, class_count=10)
