"""Data ingestion: IDX and CIFAR-10 binary loaders, synthetic regression
data, and deterministic mini-batch iteration.

Loaded pixel inputs are scaled to [0, 1] by dividing by 255; no other
normalization is applied.  Classification targets are one-hot rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .nn import Activation, NetworkParams, feedforward

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Base class for malformed data files."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray   # (n, d) float64
    targets: np.ndarray  # (n, k) float64; one-hot rows for classification
    n_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or len(self.inputs) == 0:
            raise ValueError("inputs must be a nonempty (n, d) array")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs/targets length mismatch")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.n_classes)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise CountMismatchError(
            f"label out of range 0..{n_classes - 1}: {labels.min()}..{labels.max()}")
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: too short for an IDX header")
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, "
                            f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedFileError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) < header_len + count:
        raise TruncatedFileError(
            f"{path}: payload holds {len(data) - header_len} bytes, "
            f"header promises {count}")
    payload = np.frombuffer(data, dtype=np.uint8, count=count, offset=header_len)
    return payload.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-style IDX pair: big-endian u8 images and labels.

    Pixels are divided by 255 and flattened; labels are one-hot encoded
    over 10 classes (or the observed max + 1 when larger).
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels")
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64) / 255.0
    n_classes = max(10, int(labels.max()) + 1)
    return Dataset(flat, one_hot(labels, n_classes), n_classes=n_classes)


CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 pixel bytes


def load_cifar10_binary(paths) -> Dataset:
    """CIFAR-10 binary batches: consecutive 3073-byte records."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    inputs = []
    labels = []
    for path in paths:
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) == 0 or len(data) % CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: size {len(data)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        inputs.append(records[:, 1:].astype(np.float64) / 255.0)
    labels = np.concatenate(labels)
    return Dataset(np.concatenate(inputs), one_hot(labels, 10), n_classes=10)


def teacher_student_dataset(seed: int, n_samples: int,
                            dims=(10, 5, 5, 5, 5)) -> Dataset:
    """Regression data from a fixed random teacher network.

    Inputs are standard Gaussian; targets are the teacher's pre-activation
    outputs with tanh hidden layers.  The teacher draws every entry,
    including the bias column, from the uniform fan-in scheme so the bias
    path is nonzero.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dims = list(dims)
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(rng.uniform(-bound, bound, size=(fan_out, fan_in + 1)))
    teacher = NetworkParams(layers, use_bias=True)
    xs = rng.standard_normal((n_samples, dims[0]))
    ys = np.stack([feedforward(teacher, Activation.TANH, x)[-1] for x in xs])
    return Dataset(xs, ys, n_classes=None)


def iterate(dataset: Dataset, batch_size: int, seed: int = 0,
            shuffle: bool = True, epoch: int = 0):
    """Yield (x, y) batches for one epoch in a deterministic order.

    The order depends only on (seed, epoch).  With batch_size = 1 the
    batch axis is squeezed so each step yields a single (x, y) pair.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if batch_size == 1:
            yield dataset.inputs[idx[0]], dataset.targets[idx[0]]
        else:
            yield dataset.inputs[idx], dataset.targets[idx]
