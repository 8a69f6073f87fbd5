"""SMOTE oversampling of the failure class in encoded feature space."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, EmptyInputError, SingleClassError


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio <= 1:
            raise ConfigError("target_ratio must lie in (0, 1]")


class SmoteResult(NamedTuple):
    matrix: np.ndarray
    labels: np.ndarray
    anchors: np.ndarray  # row index (into the input) of x_i for each synthetic row
    neighbors: np.ndarray  # row index of the chosen neighbour
    steps: np.ndarray  # interpolation factor u
    k_used: int
    warning: str | None = None

    @property
    def n_synthetic(self) -> int:
        return len(self.steps)

    @property
    def is_synthetic(self) -> np.ndarray:
        n = len(self.labels) - self.n_synthetic
        mask = np.zeros(len(self.labels), dtype=bool)
        mask[n:] = True
        return mask


def positive_rate(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInputError("positive_rate of an empty label vector")
    return float(np.count_nonzero(labels == 1)) / labels.size


def interpolate(x_i, x_bar, u):
    """Synthetic point on the segment from ``x_i`` towards ``x_bar``."""
    return x_i + (x_bar - x_i) * u


def nearest_minority_neighbors(points: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Exact k-NN among ``points`` by full pairwise scan, excluding self.

    Ties in distance resolve to the lower row index.
    """
    n = len(points)
    sq = np.einsum("ij,ij->i", points, points)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        d2 = sq[start : start + chunk, None] + sq[None, :] - 2.0 * block @ points.T
        np.maximum(d2, 0.0, out=d2)
        rows = np.arange(len(block))
        d2[rows, start + rows] = np.inf
        out[start : start + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote(matrix: np.ndarray, labels: np.ndarray, config: SmoteConfig = SmoteConfig()) -> SmoteResult:
    """Append synthetic minority rows until minority/majority reaches ``target_ratio``.

    Anchors cycle through the minority rows in index order; each synthetic row
    draws its neighbour (uniform among the k nearest) and its step ``u`` from
    one seeded stream, so the output depends only on the inputs and the seed.
    """
    x = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels).astype(np.int8)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClassError("SMOTE needs both classes")
    minority_label = 1 if counts[classes == 1][0] <= counts[classes == 0][0] else 0
    minority = np.flatnonzero(y == minority_label)
    n_min, n_maj = len(minority), len(y) - len(minority)
    if n_min < 2:
        raise SingleClassError("SMOTE needs at least two minority samples")

    k = config.k_neighbors
    note = None
    if n_min <= k:
        k = n_min - 1
        note = f"only {n_min} minority samples; k_neighbors clamped to {k}"
        warnings.warn(note, RuntimeWarning, stacklevel=2)

    n_syn = max(0, int(round(config.target_ratio * n_maj)) - n_min)
    rng = np.random.default_rng(config.seed)
    pick = rng.integers(0, k, size=n_syn)
    u = rng.random(n_syn)

    neigh = nearest_minority_neighbors(x[minority], k)
    local_anchor = np.arange(n_syn) % n_min
    local_neighbor = neigh[local_anchor, pick]
    anchors = minority[local_anchor]
    neighbors = minority[local_neighbor]
    synthetic = interpolate(x[anchors], x[neighbors], u[:, None])

    out_x = np.vstack([x, synthetic]) if n_syn else x.copy()
    out_y = np.concatenate([y, np.full(n_syn, minority_label, dtype=np.int8)])
    return SmoteResult(out_x, out_y, anchors, neighbors, u, k, note)
