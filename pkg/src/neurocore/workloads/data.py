"""IDX dataset loading, subsetting and label sharding."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATA_ENV = "NEUROCORE_DATA"
_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def data_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "neurocore" / "mnist"


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzip-compressed)."""
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".gz").exists():
        path = path.with_suffix(path.suffix + ".gz")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, code, ndim = struct.unpack_from(">HBB", raw)
    if zero != 0 or code not in _DTYPES:
        raise ValueError(f"{path}: not an IDX file")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    data = np.frombuffer(raw, dtype=_DTYPES[code], offset=4 + 4 * ndim)
    return data.reshape(dims)


def write_idx(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


@dataclass
class Dataset:
    """u8 images (N, C, H, W) with integer labels, split into train/test."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    encoding: str = "direct"

    @staticmethod
    def scale(x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) / 255.0

    def subset(self, n_train=None, n_test=None, seed=0) -> "Dataset":
        rng = np.random.default_rng(seed)
        tr = _stratified(self.y_train, n_train, rng)
        te = _stratified(self.y_test, n_test, rng)
        return Dataset(self.x_train[tr], self.y_train[tr], self.x_test[te], self.y_test[te], self.encoding)

    def filter_labels(self, labels) -> "Dataset":
        labels = np.asarray(list(labels))
        a = np.isin(self.y_train, labels)
        b = np.isin(self.y_test, labels)
        return Dataset(self.x_train[a], self.y_train[a], self.x_test[b], self.y_test[b], self.encoding)


def _stratified(y, n, rng) -> np.ndarray:
    idx = np.arange(len(y))
    if n is None or n >= len(y):
        return idx
    perm = rng.permutation(len(y))
    classes = np.unique(y)
    per = {c: perm[y[perm] == c] for c in classes}
    share = {c: int(round(n * len(per[c]) / len(y))) for c in classes}
    out = np.concatenate([per[c][: share[c]] for c in classes])
    if len(out) < n:
        rest = np.setdiff1d(perm, out, assume_unique=False)
        out = np.concatenate([out, rest[: n - len(out)]])
    return np.sort(out[:n])


def load_mnist(path=None) -> Dataset:
    """Load the four standard MNIST IDX files from ``path`` or $NEUROCORE_DATA."""
    root = data_dir(path)
    try:
        arrs = {k: read_idx(root / v) for k, v in MNIST_FILES.items()}
    except FileNotFoundError as exc:
        raise FileNotFoundError(
            f"MNIST IDX files not found under {root}; set ${DATA_ENV} to a directory holding "
            + ", ".join(MNIST_FILES.values())
        ) from exc
    return Dataset(
        arrs["train_images"][:, None],
        arrs["train_labels"].astype(np.int64),
        arrs["test_images"][:, None],
        arrs["test_labels"].astype(np.int64),
    )


def mnist_available(path=None) -> bool:
    root = data_dir(path)
    return all((root / f).exists() or (root / (f + ".gz")).exists() for f in MNIST_FILES.values())


def label_shards(y, workers: int, labels_per_worker: int = 2, seed=0, per_worker=None) -> list:
    """Give each worker the samples of ``labels_per_worker`` labels.

    Labels are dealt round-robin so every label is owned by some worker;
    ``per_worker`` caps the number of samples per shard.
    """
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    order = list(classes)
    shards = []
    for k in range(workers):
        own = [order[(k * labels_per_worker + j) % len(order)] for j in range(labels_per_worker)]
        idx = np.flatnonzero(np.isin(y, own))
        idx = rng.permutation(idx)
        if per_worker is not None:
            idx = idx[:per_worker]
        shards.append(np.sort(idx))
    return shards


def iid_shards(n, workers, seed=0, per_worker=None) -> list:
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, workers)
    if per_worker is not None:
        parts = [p[:per_worker] for p in parts]
    return [np.sort(p) for p in parts]


def synthetic_digits(n=200, seed=0, size=28) -> Dataset:
    """Tiny stand-in dataset: ten fixed random blob patterns plus noise."""
    rng = np.random.default_rng(seed)
    protos = (rng.random((10, size, size)) < 0.25).astype(np.float64)

    def draw(m):
        y = rng.integers(0, 10, m)
        x = protos[y] * 255 * (rng.random((m, size, size)) < 0.9)
        return x.astype(np.uint8)[:, None], y.astype(np.int64)

    xtr, ytr = draw(n)
    xte, yte = draw(max(n // 4, 10))
    return Dataset(xtr, ytr, xte, yte)
