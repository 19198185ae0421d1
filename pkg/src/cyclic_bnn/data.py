"""IDX (MNIST layout) reader/writer, synthetic two-class images, batching.

Randomness comes from numpy's PCG64 generator seeded through SeedSequence,
so every dataset and batch order is a pure function of its integer seeds.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BnnError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [n, c, h, w] float32 in [-1, 1]
    labels: np.ndarray  # [n] int64
    num_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise BnnError("label-count-mismatch", f"{len(self.images)} images, {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.num_classes)


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as f:
        data = f.read()
    if len(data) < 4:
        raise BnnError("truncated-file", str(path))
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise BnnError("bad-idx-magic", f"{path}: 0x{magic:08x}")
    rank = magic & 0xFF
    if len(data) < 4 + 4 * rank:
        raise BnnError("truncated-file", str(path))
    dims = struct.unpack(f">{rank}I", data[4:4 + 4 * rank])
    count = int(np.prod(dims))
    payload = data[4 + 4 * rank:]
    if len(payload) < count:
        raise BnnError("truncated-file", f"{path}: {len(payload)} of {count} bytes")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        f.write(array.tobytes())


def load_idx(image_path, label_path, num_classes: int | None = None) -> Dataset:
    """Single-channel images mapped from [0, 255] to [-1, 1] via ``x/127.5 - 1``."""
    pixels = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(pixels) != len(labels):
        raise BnnError("label-count-mismatch", f"{len(pixels)} images, {len(labels)} labels")
    images = (pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0))[:, None, :, :]
    k = num_classes if num_classes is not None else int(labels.max(initial=0)) + 1
    return Dataset(images, labels, k)


def save_idx(dataset: Dataset, image_path, label_path):
    """Inverse of :func:`load_idx` for single-channel datasets."""
    pixels = np.rint((dataset.images[:, 0].astype(np.float64) + 1.0) * 127.5)
    write_idx(image_path, np.clip(pixels, 0, 255))
    write_idx(label_path, dataset.labels)


def synth_dataset(n: int, seed: int, size: int = 8, noise: float = 0.35, level: float = 0.7) -> Dataset:
    """Balanced two-class ``1 x size x size`` images.

    Class 0 has a bright left half, class 1 a bright right half; the dark half
    sits at ``-level`` and Gaussian noise is added before clipping to [-1, 1].
    """
    if n < 2:
        raise BnnError("invalid-dataset-size", str(n))
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2).astype(np.int64)
    half = size // 2
    base = np.full((n, 1, size, size), -level)
    base[labels == 0, :, :, :half] = level
    base[labels == 1, :, :, half:] = level
    images = np.clip(base + noise * rng.standard_normal(base.shape), -1.0, 1.0).astype(np.float32)
    return Dataset(images, labels, 2)


def batches(d: Dataset, batch_size: int, shuffle_seed: int, epoch: int):
    """Shuffled ``(images, labels)`` batches; the final short batch is kept."""
    if batch_size < 1:
        raise BnnError("invalid-batch-size", str(batch_size))
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(d))
    return [(d.images[idx], d.labels[idx]) for idx in
            (order[i:i + batch_size] for i in range(0, len(d), batch_size))]
