"""Domain types, rating-grid arithmetic, divergences, datasets and seeding.

Public vectors and noise vectors are plain 1-D float arrays; the grid and
dataset types carry the validation.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

L0_THRESHOLD = 1e-12
GRID_TOL = 1e-9

DEFAULT_GRID_VALUES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


class InfiniteDivergenceError(ValueError):
    """Raised when KL(p||q) is infinite (q_i = 0 where p_i > 0)."""


class NoiseTypePolicy(enum.Enum):
    MODIFY_EXIST = "modify_exist"
    ADD_NEW = "add_new"
    MODIFY_ADD = "modify_add"

    @classmethod
    def parse(cls, value: "str | NoiseTypePolicy") -> "NoiseTypePolicy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"modifyexist": "modify_exist", "addnew": "add_new", "modifyadd": "modify_add"}
        key = aliases.get(key, key)
        return cls(key)


@dataclass(frozen=True)
class RatingGrid:
    values: tuple = DEFAULT_GRID_VALUES

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("grid needs at least 2 values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be strictly increasing")
        if vals[0] != 0.0:
            raise ValueError("grid must contain 0.0 as its lowest value")
        if vals[-1] > 1.0:
            raise ValueError("grid values must lie in [0, 1]")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def max_value(self) -> float:
        return self.values[-1]

    def snap(self, v) -> np.ndarray:
        """Vectorised round_to_grid; exact ties go to the lower value."""
        v = np.asarray(v, dtype=float)
        g = self.array
        dist = np.abs(v[..., None] - g)
        best = dist.min(axis=-1, keepdims=True)
        # first index within tolerance of the best distance = lower value on ties
        idx = np.argmax(dist <= best + 1e-12, axis=-1)
        return g[idx]

    def index_of(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.argmin(np.abs(v[..., None] - self.array), axis=-1)

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.min(np.abs(v[..., None] - self.array), axis=-1) <= GRID_TOL


def round_to_grid(v: float, grid: RatingGrid = RatingGrid()) -> float:
    return float(grid.snap(v))


def is_grid_valid(x, grid: RatingGrid = RatingGrid()) -> bool:
    x = np.asarray(x, dtype=float)
    return x.ndim >= 1 and x.size >= 1 and bool(np.all(grid.contains(x)))


def l0_norm(r) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(r, dtype=float)) > L0_THRESHOLD))


def l2_norm(r) -> float:
    return float(np.linalg.norm(np.asarray(r, dtype=float)))


def apply_noise(x, r, grid: RatingGrid = RatingGrid()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.shape != r.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, r has shape {r.shape}")
    return grid.snap(np.clip(x + r, 0.0, 1.0))


def kl_divergence(p, q) -> float:
    """KL(p||q) in nats, with 0*ln(0/q) = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector")
    support = p > 0
    if np.any(q[support] <= 0):
        raise InfiniteDivergenceError("q has zero mass where p is positive")
    return max(0.0, math.fsum(p[support] * np.log(p[support] / q[support])))


def policy_feasible_indices(x, policy: NoiseTypePolicy) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    policy = NoiseTypePolicy.parse(policy)
    if policy is NoiseTypePolicy.MODIFY_EXIST:
        return np.flatnonzero(x != 0)
    if policy is NoiseTypePolicy.ADD_NEW:
        return np.flatnonzero(x == 0)
    return np.arange(x.size)


def _stable_hash(s: str) -> int:
    return int.from_bytes(hashlib.sha256(s.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class SeedSpec:
    """Master seed; per-user streams depend only on (seed, user id, stage)."""

    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def rng(self, user_id: str = "", stage: str = "") -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.master_seed), _stable_hash(str(user_id)), _stable_hash(stage)])
        return np.random.default_rng(ss)

    def derive(self, stage: str) -> "SeedSpec":
        """A new master seed for a sub-experiment."""
        return SeedSpec(int(self.rng("", stage).integers(0, 2**63)))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedSpec):
        return seed.rng()
    return np.random.default_rng(seed)


@dataclass
class Dataset:
    """Users' public vectors plus optional attribute labels (-1 = unlabeled)."""

    X: np.ndarray
    labels: np.ndarray
    m: int
    user_ids: list = field(default_factory=list)
    grid: RatingGrid = RatingGrid()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise ValueError("X must be an (n, d) array with d >= 1")
        n = self.X.shape[0]
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=int)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per row")
        if not self.user_ids:
            self.user_ids = [f"u{i:06d}" for i in range(n)]
        self.user_ids = [str(u) for u in self.user_ids]
        if len(self.user_ids) != n or len(set(self.user_ids)) != n:
            raise ValueError("user_ids must be unique, one per row")
        if np.any(self.labels >= self.m) or np.any(self.labels < -1):
            raise ValueError(f"labels must lie in [0, {self.m}) or be -1 (missing)")
        if self.m < 1:
            raise ValueError("m must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def fully_labeled(self) -> bool:
        return bool(np.all(self.labels >= 0))

    def require_labels(self) -> None:
        if self.n == 0:
            raise ValueError("empty dataset")
        if not self.fully_labeled:
            raise ValueError("all rows must be labeled")

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.labels[idx], self.m, [self.user_ids[i] for i in idx], self.grid)

    def with_X(self, X) -> "Dataset":
        return Dataset(np.asarray(X, dtype=float), self.labels.copy(), self.m, list(self.user_ids), self.grid)

    def label_of(self, i: int) -> Optional[int]:
        lab = int(self.labels[i])
        return None if lab < 0 else lab


def split_overlap(ds: Dataset, alpha_pct: float, seed) -> tuple:
    """Two folds of floor(n/2) rows sharing round(alpha% * floor(n/2)) rows."""
    if ds.n < 2:
        raise ValueError("need at least 2 rows to split")
    if not 0 <= alpha_pct <= 100:
        raise ValueError("alpha_pct must lie in [0, 100]")
    half = ds.n // 2
    k = int(math.floor(alpha_pct / 100.0 * half + 0.5))
    perm = as_rng(seed).permutation(ds.n)
    shared = perm[:k]
    a = np.concatenate([shared, perm[k:half]])
    b = np.concatenate([shared, perm[half:2 * half - k]])
    return ds.subset(np.sort(a)), ds.subset(np.sort(b))


def train_test_split(ds: Dataset, test_fraction: float, seed) -> tuple:
    perm = as_rng(seed).permutation(ds.n)
    n_test = int(round(test_fraction * ds.n))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def synth_generate(d: int, m: int, n: int, sparsity: float, signal: float, seed,
                   grid: RatingGrid = RatingGrid(), popularity_skew: float = 1.0,
                   affinity: float = 1.0) -> Dataset:
    """Label-block synthetic rating data.

    Items are split into m disjoint blocks of d // m "signal items". A user
    with label s rates k ~ 1 + Poisson(sparsity - 1) items: ``round(signal * k)``
    of them from block s (capped at the block size), the rest uniformly from
    all remaining items. Inside
    a block, item j (0-based) is picked with weight 1 / (j + 1)**popularity_skew,
    mimicking the head-heavy popularity of real catalogues. Ratings of
    in-block items favour high levels (level k of the nonzero levels has
    weight k**affinity); other ratings are uniform over the nonzero levels.
    """
    if not (d >= m >= 2 and n >= 1):
        raise ValueError("need d >= m >= 2 and n >= 1")
    if not 0 <= signal <= 1:
        raise ValueError("signal must lie in [0, 1]")
    if sparsity > d or sparsity < 1:
        raise ValueError(f"sparsity must lie in [1, d={d}]")
    rng = as_rng(seed)
    block = d // m
    weights = 1.0 / np.arange(1, block + 1) ** popularity_skew
    weights /= weights.sum()
    levels = grid.array[1:]
    liked = np.arange(1, levels.size + 1, dtype=float) ** affinity
    liked /= liked.sum()
    X = np.zeros((n, d))
    labels = rng.integers(0, m, size=n)
    for u in range(n):
        s = labels[u]
        k = int(min(d, 1 + rng.poisson(sparsity - 1)))
        want = int(round(signal * k))
        n_sig = min(want, block)
        sig = rng.choice(np.arange(s * block, (s + 1) * block), n_sig, replace=False, p=weights)
        rest = np.setdiff1d(np.arange(d), sig)
        bg = rng.choice(rest, min(k - want, rest.size), replace=False)
        X[u, sig] = rng.choice(levels, size=sig.size, p=liked)
        X[u, bg] = rng.choice(levels, size=bg.size)
    return Dataset(X, labels, m, grid=grid)


# -- JSON-lines dataset files ------------------------------------------------

def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"d": ds.d, "m": ds.m, "grid": list(ds.grid.values)}) + "\n")
        for uid, x, lab in zip(ds.user_ids, ds.X, ds.labels):
            nz = np.flatnonzero(x)
            row = {"user_id": uid,
                   "entries": [[int(k), float(x[k])] for k in nz],
                   "label": None if lab < 0 else int(lab)}
            fh.write(json.dumps(row) + "\n")


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    d, m = int(header["d"]), int(header["m"])
    grid = RatingGrid(tuple(header.get("grid", DEFAULT_GRID_VALUES)))
    rows = [json.loads(ln) for ln in lines[1:]]
    X = np.zeros((len(rows), d))
    labels = np.full(len(rows), -1, dtype=int)
    for i, row in enumerate(rows):
        for k, v in row["entries"]:
            if not 0 <= k < d:
                raise ValueError(f"{path}: entry index {k} out of range for d={d}")
            X[i, k] = v
        if row.get("label") is not None:
            labels[i] = int(row["label"])
    if not np.all(grid.contains(X)):
        raise ValueError(f"{path}: entries off the rating grid")
    return Dataset(X, labels, m, [r["user_id"] for r in rows], grid)


def check_probability(p: Iterable[float]) -> np.ndarray:
    p = np.asarray(list(p), dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("not a probability vector")
    return p
