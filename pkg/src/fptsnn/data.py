"""Datasets: synthetic rate-coded templates and IDX (MNIST-style) image files.

Inputs are stored as ``(N, D, T)`` current sequences, time last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Wrong magic number or malformed header."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the payload its header announces."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of items."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 3:
            raise ValueError(f"inputs must be (N, D, T), got shape {self.inputs.shape}")
        if len(self.labels) != len(self.inputs) or len(self.labels) < 1:
            raise ValueError("need one label per sample and at least one sample")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def timesteps(self) -> int:
        return self.inputs.shape[-1]

    @property
    def features(self) -> int:
        return self.inputs.shape[1]

    @property
    def classes(self) -> int:
        return int(self.metadata.get("classes", self.labels.max() + 1))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], dict(self.metadata))


def generate_synthetic(classes: int = 2, n_per_class: int = 100, t: int = 16, d: int = 32,
                       seed: int = 0, noise: float = 0.5) -> Dataset:
    """Class templates in ``[0, 1]^d`` plus per-timestep Gaussian noise.

    Templates depend only on ``seed`` and ``d``, so datasets generated with
    different ``t`` share them.
    """
    if min(classes, n_per_class, t, d) < 1:
        raise ValueError("all counts must be at least 1")
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.0, 1.0, size=(classes, d))
    noise_rng = np.random.default_rng([seed, t])
    labels = np.repeat(np.arange(classes), n_per_class)
    inputs = templates[labels][:, :, None] + noise * noise_rng.standard_normal((len(labels), d, t))
    order = noise_rng.permutation(len(labels))
    meta = {"source": "synthetic", "seed": seed, "classes": classes, "noise": noise,
            "templates": templates}
    return Dataset(inputs[order], labels[order], meta)


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def read_idx_images(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 16:
        raise IdxTruncatedError(f"{path}: header needs 16 bytes, file has {len(raw)}")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}")
    size = n * rows * cols
    if len(raw) - 16 < size:
        raise IdxTruncatedError(f"{path}: expected {size} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 8:
        raise IdxTruncatedError(f"{path}: header needs 8 bytes, file has {len(raw)}")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}")
    if len(raw) - 8 < n:
        raise IdxTruncatedError(f"{path}: expected {n} labels, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).copy()


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(N, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, t: int, encoding: str = "repeat") -> Dataset:
    """Load an IDX image/label pair; pixels become a constant current over ``t`` steps."""
    if encoding != "repeat":
        raise ValueError(f"unknown encoding {encoding!r}")
    if t < 1:
        raise ValueError("timesteps must be at least 1")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images but {len(labels)} labels")
    pixels = images.reshape(len(images), -1).astype(np.float64) / 255.0
    inputs = np.repeat(pixels[:, :, None], t, axis=2)
    meta = {"source": "idx", "images": str(images_path), "labels": str(labels_path),
            "classes": int(labels.max()) + 1 if len(labels) else 0}
    return Dataset(inputs, labels, meta)
