"""Comparison defenses: randomized response, correlation top-k, and k-means QPM."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, RatingGrid, as_rng


@dataclass(frozen=True)
class RrConfig:
    epsilon: float
    grid: RatingGrid = RatingGrid()

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def keep_probability(self) -> float:
        g = self.grid.size
        # e^eps / (e^eps + g - 1), written to survive huge epsilon
        return 1.0 / (1.0 + (g - 1) * np.exp(-self.epsilon))


def rr_defend(x, cfg: RrConfig, seed=None) -> np.ndarray:
    """Generalized randomized response applied independently to every entry."""
    x = np.asarray(x, dtype=float)
    rng = as_rng(seed)
    g = cfg.grid.size
    true_idx = cfg.grid.index_of(x)
    keep = rng.random(x.shape) < cfg.keep_probability
    # uniform over the g-1 other levels: draw from 0..g-2 and skip the true index
    other = rng.integers(0, g - 1, size=x.shape)
    other = other + (other >= true_idx)
    return cfg.grid.array[np.where(keep, true_idx, other)]


def correlation_defend(x, true_label: int, k: int, lr_model, grid: RatingGrid = RatingGrid()) -> np.ndarray:
    """Add the top-k items most indicative of some other label.

    Items are scored by ``max_{i != true_label} W[i, j]``; only currently-zero
    entries are eligible and each chosen entry is set to the top grid value.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    x = np.asarray(x, dtype=float)
    W = np.asarray(lr_model.W)
    if W.shape[1] != x.size:
        raise ValueError("model dimension does not match x")
    if not 0 <= true_label < W.shape[0]:
        raise ValueError("true_label out of range")
    scores = np.delete(W, true_label, axis=0).max(axis=0)
    zeros = np.flatnonzero(x == 0)
    if k > zeros.size:
        warnings.warn(f"only {zeros.size} zero entries available, modifying all of them")
    # stable sort on -score keeps lower indices first among equal scores
    order = zeros[np.argsort(-scores[zeros], kind="stable")][:k]
    out = x.copy()
    out[order] = grid.max_value
    return out


@dataclass
class Codebook:
    centroids: np.ndarray
    distortion_history: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def assign(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.centroids.shape[1]:
            raise ValueError("dimension mismatch with codebook")
        d2 = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d2, axis=1)


def _distortion(X, C, assign):
    return float(np.mean(((X - C[assign]) ** 2).sum(axis=1)))


def quantize_kmeans(ds: Dataset, K: int, iters: int = 50, seed=None) -> Codebook:
    """Lloyd's k-means from K distinct random rows, fixed iteration count."""
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if not 1 <= K <= n:
        raise ValueError("need 1 <= K <= n")
    rng = as_rng(seed)
    C = X[np.sort(rng.choice(n, K, replace=False))].copy()
    book = Codebook(C)
    a = book.assign(X)
    history = [_distortion(X, C, a)]
    for _ in range(iters):
        for j in range(K):
            members = X[a == j]
            if len(members):
                C[j] = members.mean(axis=0)
        a = book.assign(X)
        history.append(_distortion(X, C, a))
    book.distortion_history = history
    return book


def qpm_defend(x, codebook: Codebook, game_mapping, seed=None, grid: RatingGrid = RatingGrid()) -> np.ndarray:
    """Map x to its centroid, then resample a centroid from the mapping row."""
    f = np.asarray(getattr(game_mapping, "f", game_mapping), dtype=float)
    if f.shape != (codebook.K, codebook.K):
        raise ValueError("mapping must be K x K over codebook indices")
    src = int(codebook.assign(x)[0])
    row = f[src] / f[src].sum()
    dst = int(min(np.searchsorted(np.cumsum(row), as_rng(seed).random(), side="right"), codebook.K - 1))
    return grid.snap(np.clip(codebook.centroids[dst], 0.0, 1.0))


def qpm_game_inputs(ds: Dataset, codebook: Codebook, grid: RatingGrid = RatingGrid()):
    """Joint Pr(s, centroid) and L0 utility loss between snapped centroids."""
    ds.require_labels()
    a = codebook.assign(ds.X)
    joint = np.zeros((ds.m, codebook.K))
    np.add.at(joint, (ds.labels, a), 1.0)
    joint /= joint.sum()
    snapped = grid.snap(np.clip(codebook.centroids, 0.0, 1.0))
    d_q = (np.abs(snapped[:, None, :] - snapped[None, :, :]) > 1e-12).sum(axis=-1).astype(float)
    return joint, d_q
