"""Seeded synthetic dataset generators."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

GENERATORS = ("gaussian_blobs", "two_moons_like", "parity_bits", "tiny_grid_images")
SPLITS = {"train": 0, "test": 1, "probe": 2}


class Dataset(NamedTuple):
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class DatasetSpec:
    generator: str
    n: int
    feature_dim: int = 2
    num_classes: int = 2
    noise_level: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ValueError("need feature_dim >= 1 and num_classes >= 2")

    def with_n(self, n: int) -> "DatasetSpec":
        return replace(self, n=n)


def _rng(spec: DatasetSpec, split: str, replication: int) -> np.random.Generator:
    key = [spec.seed & (2**64 - 1), 0xDA7A, SPLITS[split], replication]
    return np.random.default_rng(np.random.SeedSequence(key))


def class_centroids(spec: DatasetSpec) -> np.ndarray:
    """Blob centres, shared by every split of one spec."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & (2**64 - 1), 0xCE7]))
    c = rng.normal(size=(spec.num_classes, spec.feature_dim))
    return 2.0 * c / np.linalg.norm(c, axis=1, keepdims=True)


def _blobs(spec, rng):
    y = rng.integers(0, spec.num_classes, size=spec.n)
    X = class_centroids(spec)[y]
    if spec.noise_level > 0:
        X = X + spec.noise_level * rng.normal(size=X.shape)
    return X, y


def _moons(spec, rng):
    if spec.feature_dim < 2 or spec.num_classes != 2:
        raise ValueError("two_moons_like needs feature_dim >= 2 and two classes")
    y = rng.integers(0, 2, size=spec.n)
    t = rng.uniform(0.0, math.pi, size=spec.n)
    X = np.zeros((spec.n, spec.feature_dim))
    X[:, 0] = np.where(y == 0, np.cos(t), 1.0 - np.cos(t))
    X[:, 1] = np.where(y == 0, np.sin(t), 0.5 - np.sin(t))
    if spec.noise_level > 0:
        X = X + spec.noise_level * rng.normal(size=X.shape)
    return X, y


def _parity(spec, rng):
    if spec.num_classes != 2:
        raise ValueError("parity_bits is a binary task")
    X = rng.integers(0, 2, size=(spec.n, spec.feature_dim))
    y = X.sum(axis=1) % 2
    if spec.noise_level > 0:
        flip = rng.random(spec.n) < spec.noise_level
        y = np.where(flip, 1 - y, y)
    return X.astype(np.float64), y


def _grid(spec, rng):
    side = math.isqrt(spec.feature_dim)
    if side * side != spec.feature_dim or side < 2:
        raise ValueError("tiny_grid_images needs a square feature_dim >= 4")
    if spec.num_classes not in (2, 3):
        raise ValueError("tiny_grid_images supports 2 or 3 classes")
    y = rng.integers(0, spec.num_classes, size=spec.n)
    pos = rng.integers(0, side, size=spec.n)
    img = np.zeros((spec.n, side, side))
    rows = np.arange(spec.n)
    for i in range(side):
        horiz = (y == 0) & (pos == i)
        vert = (y == 1) & (pos == i)
        img[horiz, i, :] = 1.0
        img[vert, :, i] = 1.0
    diag = y == 2
    img[diag] = np.eye(side)
    img[rows[diag & (pos % 2 == 1)]] = np.fliplr(np.eye(side))
    X = img.reshape(spec.n, -1)
    if spec.noise_level > 0:
        X = X + spec.noise_level * rng.normal(size=X.shape)
    return X, y


_IMPL = {"gaussian_blobs": _blobs, "two_moons_like": _moons,
         "parity_bits": _parity, "tiny_grid_images": _grid}


def gen_dataset(spec: DatasetSpec, split: str = "train", replication: int = 0) -> Dataset:
    """Draw ``spec.n`` examples.

    Splits and replications use disjoint seed streams, so a test set is
    independent of the training set drawn for the same replication.
    """
    X, y = _IMPL[spec.generator](spec, _rng(spec, split, replication))
    return Dataset(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64))
