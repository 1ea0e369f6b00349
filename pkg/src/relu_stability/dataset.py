"""Datasets: synthetic regression, sampled functions, MNIST binary subsets.

A :class:`Dataset` is the empirical distribution behind every expectation in
the stability quantities, so all statistics here use the uniform 1/n weights.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .rng import Stream

PIXEL_SCALE = 255.0  # MNIST bytes are divided by this before training


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,)

    def __post_init__(self):
        xs = np.atleast_2d(np.array(self.xs, dtype=np.float64))
        ys = np.array(self.ys, dtype=np.float64).reshape(-1)
        if xs.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if xs.shape[0] != ys.shape[0]:
            raise ValueError(f"{xs.shape[0]} inputs but {ys.shape[0]} targets")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("dataset entries must be finite")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.xs[idx], self.ys[idx])


@dataclass(frozen=True)
class DatasetStats:
    mean: np.ndarray
    cov_top_eig: float
    mean_sq_norm: float


def gen_gaussian_regression(n: int, d: int, seed: int) -> Dataset:
    """n i.i.d. standard normal inputs in R^d with standard normal targets."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    s = Stream(seed, stream=0)
    xs = s.normal((n, d))
    ys = s.normal(n)
    return Dataset(xs, ys)


def sample_function(f: Callable[[np.ndarray], float], points) -> Dataset:
    xs = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ys = np.array([float(f(x)) for x in xs])
    return Dataset(xs, ys)


def dataset_stats(ds: Dataset) -> DatasetStats:
    cov = linalg.covariance(ds.xs)
    top = linalg.top_eigenpair(cov).value if ds.d > 0 else 0.0
    return DatasetStats(
        mean=ds.xs.mean(axis=0),
        cov_top_eig=max(float(top), 0.0),
        mean_sq_norm=float(np.mean(np.sum(ds.xs ** 2, axis=1))),
    )


def knot_clearance(ds: Dataset, atoms: Sequence) -> float:
    """min over atoms and points of |x^T v_bar - b_bar|; inf without atoms."""
    if len(atoms) == 0:
        return float("inf")
    v = np.array([a.v_bar for a in atoms])  # (m, d)
    b = np.array([a.b_bar for a in atoms])
    return float(np.min(np.abs(ds.xs @ v.T - b)))


# -- IDX -----------------------------------------------------------------

class IdxError(ValueError):
    """Malformed IDX payload."""


class BadMagic(IdxError):
    pass


class TruncatedPayload(IdxError):
    pass


class DimOverflow(IdxError):
    pass


class InsufficientSamples(ValueError):
    pass


IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _parse_idx(data: bytes, expected_rank: int) -> np.ndarray:
    if len(data) < 4:
        raise TruncatedPayload("magic: need 4 header bytes")
    if data[0] != 0 or data[1] != 0:
        raise BadMagic(f"magic: leading bytes must be zero, got {data[0]:#04x} {data[1]:#04x}")
    if data[2] != 0x08:
        raise BadMagic(f"magic: type code {data[2]:#04x} unsupported (only 0x08)")
    rank = data[3]
    if rank != expected_rank:
        raise BadMagic(f"magic: rank {rank}, expected {expected_rank}")
    header_len = 4 + 4 * rank
    if len(data) < header_len:
        raise TruncatedPayload(f"dims: need {header_len} header bytes, got {len(data)}")
    dims = struct.unpack(f">{rank}I", data[4:header_len])
    count = 1
    for i, dim in enumerate(dims):
        count *= dim
        if count > 2 ** 40:
            raise DimOverflow(f"dim[{i}]={dim}: payload size overflows")
    payload = data[header_len:]
    if len(payload) < count:
        raise TruncatedPayload(f"payload: header declares {count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def load_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file into (count, rows*cols) floats in [0, 1]."""
    arr = _parse_idx(data, 3)
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / PIXEL_SCALE


def load_idx_labels(data: bytes) -> np.ndarray:
    return _parse_idx(data, 1).astype(np.int64)


def write_idx(arr) -> bytes:
    """Serialize a uint8 array as IDX (inverse of the loaders)."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError("only unsigned byte payloads are supported")
    head = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def binary_subset(images, labels, class_pos: int, class_neg: int,
                  n_train: int, n_val: int, seed: int):
    """Balanced +/-1 training set and a disjoint validation set.

    Training draws ceil(n_train/2) positives and floor(n_train/2) negatives;
    validation draws n_val samples from what is left of the two classes,
    balanced the same way.
    """
    if class_pos == class_neg:
        raise InsufficientSamples("class_pos and class_neg must differ")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    s = Stream(seed, stream=1)
    pos = np.flatnonzero(labels == class_pos)
    neg = np.flatnonzero(labels == class_neg)
    pos = pos[s.permutation(len(pos))]
    neg = neg[s.permutation(len(neg))]
    tp, tn = (n_train + 1) // 2, n_train // 2
    vp, vn = (n_val + 1) // 2, n_val // 2
    if len(pos) < tp + vp or len(neg) < tn + vn:
        raise InsufficientSamples(
            f"need {tp + vp} of class {class_pos} and {tn + vn} of class {class_neg}, "
            f"have {len(pos)} and {len(neg)}")

    def make(p_idx, n_idx):
        idx = np.concatenate([p_idx, n_idx])
        y = np.concatenate([np.ones(len(p_idx)), -np.ones(len(n_idx))])
        order = np.argsort(idx, kind="stable")
        return Dataset(images[idx[order]], y[order]), idx[order]

    train, _ = make(pos[:tp], neg[:tn])
    val, _ = make(pos[tp:tp + vp], neg[tn:tn + vn])
    return train, val


def binary_subset_indices(labels, class_pos, class_neg, n_train, n_val, seed):
    """Index sets behind :func:`binary_subset` (for disjointness checks)."""
    labels = np.asarray(labels)
    fake = np.arange(len(labels), dtype=np.float64)[:, None]
    train, val = binary_subset(fake, labels, class_pos, class_neg, n_train, n_val, seed)
    return train.xs[:, 0].astype(int), val.xs[:, 0].astype(int)
