"""Reader and writer for the IDX files that ship the (Fashion-)MNIST data.

Headers are big-endian: a 4-byte magic (0x803 for uint8 image cubes, 0x801
for uint8 label vectors) followed by one u32 per dimension.
"""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..container import atomic_write_bytes
from ..errors import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SIDE = 28

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@dataclass
class ImageDataset:
    images: np.ndarray     # (n, 784) in [0, 1]
    labels: np.ndarray     # (n,) in 0..9

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise FormatError("pixel values outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise FormatError("labels outside 0..9")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return ImageDataset(self.images[idx], self.labels[idx])


def _read(path):
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _header(data, magic, ndim, path):
    need = 4 + 4 * ndim
    if len(data) < need:
        raise FormatError(f"{path}: header truncated at byte offset {len(data)} (need {need})")
    (got,) = struct.unpack_from(">I", data, 0)
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x} at byte offset 0, expected 0x{magic:08x}")
    return struct.unpack_from(f">{ndim}I", data, 4), need


def read_images(path):
    data = _read(path)
    (n, rows, cols), off = _header(data, IMAGES_MAGIC, 3, path)
    if (rows, cols) != (SIDE, SIDE):
        raise FormatError(f"{path}: image dims {rows}x{cols} at byte offset 8, expected 28x28")
    end = off + n * rows * cols
    if len(data) < end:
        raise FormatError(f"{path}: payload truncated at byte offset {len(data)}, expected {end}")
    if len(data) > end:
        raise FormatError(f"{path}: {len(data) - end} trailing bytes after byte offset {end}")
    px = np.frombuffer(data, dtype=np.uint8, count=n * rows * cols, offset=off)
    return px.reshape(n, rows * cols).astype(np.float64) / 255.0


def read_labels(path):
    data = _read(path)
    (n,), off = _header(data, LABELS_MAGIC, 1, path)
    end = off + n
    if len(data) < end:
        raise FormatError(f"{path}: payload truncated at byte offset {len(data)}, expected {end}")
    if len(data) > end:
        raise FormatError(f"{path}: {len(data) - end} trailing bytes after byte offset {end}")
    lab = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).astype(np.int64)
    if lab.size and lab.max() > 9:
        bad = int(np.argmax(lab > 9))
        raise FormatError(f"{path}: label {lab[bad]} at byte offset {off + bad}")
    return lab


def parse_idx(images_path, labels_path):
    images = read_images(images_path)
    labels = read_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"count mismatch: {images_path} has {len(images)} images "
                          f"(byte offset 4), {labels_path} has {len(labels)} labels (byte offset 4)")
    return ImageDataset(images, labels)


def _find(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = Path(directory) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_fashion(directory):
    """(train, test) from a directory holding the four official files."""
    return tuple(parse_idx(_find(directory, a), _find(directory, b))
                 for a, b in (TRAIN_FILES, TEST_FILES))


def encode_images(images):
    images = np.asarray(images)
    n = len(images)
    px = np.rint(np.asarray(images, dtype=float).reshape(n, -1) * 255.0).astype(np.uint8)
    return struct.pack(">IIII", IMAGES_MAGIC, n, SIDE, SIDE) + px.tobytes()


def encode_labels(labels):
    lab = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABELS_MAGIC, len(lab)) + lab.tobytes()


def write_idx(images_path, labels_path, dataset):
    atomic_write_bytes(images_path, encode_images(dataset.images))
    atomic_write_bytes(labels_path, encode_labels(dataset.labels))
