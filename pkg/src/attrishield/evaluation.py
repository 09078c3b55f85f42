"""Experiment harness: defended datasets, attack accuracy, budget sweeps and
recommender utility.

Per-user randomness always comes from ``SeedSpec.rng(user_id, stage)``, so
results do not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .classify import TrainConfig, accuracy, baseline_most_popular, train_linear, train_mlp
from .core import Dataset, NoiseTypePolicy, SeedSpec, as_rng, l0_norm, l2_norm, split_overlap, train_test_split
from .evade import EvasionResult, PandaConfig, find_all_noises
from .mechanism import defend_from_evasions, target_empirical, target_uniform


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; output order never depends on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_attack(attacker, defended: Dataset) -> float:
    return accuracy(attacker, defended)


@dataclass(frozen=True)
class DefenseRecord:
    user_id: str
    chosen: int
    l0_cost: int
    l2: float
    binding: bool
    mu0: float
    lam: float


def phase_one(model, ds: Dataset, cfg: PandaConfig = PandaConfig(), threads: int = 1) -> List[List[EvasionResult]]:
    return parallel_map(lambda x: find_all_noises(model, x, cfg=cfg), list(ds.X), threads)


def defend_dataset(model, ds: Dataset, p, beta: float, cfg: PandaConfig = PandaConfig(),
                   seed: SeedSpec = SeedSpec(), threads: int = 1,
                   evasions: Optional[List[List[EvasionResult]]] = None):
    """AttriGuard every row of ``ds``; returns (noisy dataset, records).

    Pass ``evasions`` from ``phase_one`` to reuse Phase I across budgets.
    """
    if evasions is None:
        evasions = phase_one(model, ds, cfg, threads)

    def one(i):
        out = defend_from_evasions(ds.X[i], evasions[i], p, beta, seed.rng(ds.user_ids[i], "defend"), cfg.grid)
        r = out.x_noisy - ds.X[i]
        rec = DefenseRecord(ds.user_ids[i], out.chosen, l0_norm(r), l2_norm(r),
                            out.report.binding, out.report.mu0, out.report.lam)
        return out.x_noisy, rec

    pairs = parallel_map(one, list(range(ds.n)), threads)
    X = np.array([x for x, _ in pairs]).reshape(ds.X.shape)
    return ds.with_X(X), [rec for _, rec in pairs]


def defend_dataset_with(fn: Callable, ds: Dataset, seed: SeedSpec, stage: str, threads: int = 1) -> Dataset:
    """Apply a per-row baseline ``fn(x, label, rng)`` with per-user streams."""
    def one(i):
        return fn(ds.X[i], ds.label_of(i), seed.rng(ds.user_ids[i], stage))
    rows = parallel_map(one, list(range(ds.n)), threads)
    return ds.with_X(np.array(rows).reshape(ds.X.shape))


def noise_stats(records: Sequence) -> Dict[int, float]:
    """Mean L0 of the applied noise grouped by chosen target index."""
    groups: Dict[int, list] = {}
    for rec in records:
        groups.setdefault(int(rec.chosen), []).append(float(rec.l0_cost))
    return {k: math.fsum(v) / len(v) for k, v in sorted(groups.items())}


def write_records_csv(path, records: Sequence[DefenseRecord], method: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["user_id", "chosen_index", "l0_cost", "binding", "mu0", "lambda"]
        w.writerow(head + (["method"] if method else []))
        for r in records:
            row = [r.user_id, r.chosen, r.l0_cost, int(r.binding), f"{r.mu0:.6f}", f"{r.lam:.6f}"]
            w.writerow(row + ([method] if method else []))


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    HEADER = ("beta", "attack", "accuracy", "mean_l0", "mean_l2")

    def add(self, beta, attack, acc, mean_l0, mean_l2):
        self.rows.append((float(beta), str(attack), float(acc), float(mean_l0), float(mean_l2)))

    def for_attack(self, attack: str) -> list:
        return [r for r in self.rows if r[1] == attack]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for beta, attack, acc, l0, l2 in self.rows:
            w.writerow([f"{beta:.6f}", attack, f"{acc:.6f}", f"{l0:.6f}", f"{l2:.6f}"])
        return buf.getvalue()


def sweep_budget(defender, attackers, test: Dataset, betas: Sequence[float], policy, p,
                 seed: SeedSpec = SeedSpec(), cfg: PandaConfig = PandaConfig(), threads: int = 1,
                 evasions=None) -> SweepResult:
    """Inference accuracy of every attacker as the utility-loss budget grows.

    ``attackers`` maps names to predictors (or is a list of pairs).
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ValueError("betas must be non-empty")
    if any(b < 0 for b in betas) or betas != sorted(betas):
        raise ValueError("betas must be non-negative and ascending")
    if policy is not None:
        cfg = replace(cfg, policy=NoiseTypePolicy.parse(policy))
    attackers = list(attackers.items()) if isinstance(attackers, dict) else list(attackers)
    if evasions is None:
        evasions = phase_one(defender, test, cfg, threads)
    result = SweepResult()
    for beta in betas:
        noisy, recs = defend_dataset(defender, test, p, beta, cfg, seed, threads, evasions)
        l0 = math.fsum(r.l0_cost for r in recs) / len(recs)
        l2 = math.fsum(r.l2 for r in recs) / len(recs)
        for name, att in attackers:
            result.add(beta, name, run_attack(att, noisy), l0, l2)
    return result


# -- experiment setup ---------------------------------------------------------------

ATTACKS = ("BA-A", "LR-A", "NN-A")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fold protocol: hold out a test set, split the rest into two folds with
    ``alpha`` percent overlap; the defender trains on fold A, attackers on B."""
    alpha: float = 0.0
    test_fraction: float = 1 / 6
    max_test: int = 1000
    defender: str = "linear"
    attacks: tuple = ATTACKS
    hidden: int = 64
    linear: TrainConfig = TrainConfig(epochs=60, learning_rate=0.5, l2_penalty=1e-2)
    mlp: TrainConfig = TrainConfig(epochs=60, learning_rate=0.1, l2_penalty=1e-2)
    target: str = "empirical"

    def __post_init__(self):
        if not 0 <= self.alpha <= 100:
            raise ValueError("alpha must lie in [0, 100]")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.defender not in ("linear", "mlp"):
            raise ValueError("defender must be 'linear' or 'mlp'")
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown:
            raise ValueError(f"unknown attacks: {sorted(unknown)}")
        if self.target not in ("uniform", "empirical"):
            raise ValueError("target must be 'uniform' or 'empirical'")


@dataclass
class Experiment:
    defender: object
    attackers: dict
    test: Dataset
    fold_a: Dataset
    fold_b: Dataset
    p: np.ndarray


def build_experiment(ds: Dataset, cfg: ExperimentConfig = ExperimentConfig(), seed: SeedSpec = SeedSpec()) -> Experiment:
    ds.require_labels()
    split_seed = int(seed.rng("", "split").integers(2**63))
    train, test = train_test_split(ds, cfg.test_fraction, split_seed)
    test = test.subset(range(min(cfg.max_test, test.n)))
    A, B = split_overlap(train, cfg.alpha, seed.derive("overlap"))
    if cfg.defender == "linear":
        defender = train_linear(A, cfg.linear)
    else:
        defender = train_mlp(A, cfg.mlp, cfg.hidden)
    makers = {
        "BA-A": lambda: baseline_most_popular(B.labels),
        "LR-A": lambda: train_linear(B, cfg.linear),
        "NN-A": lambda: train_mlp(B, cfg.mlp, cfg.hidden),
    }
    attackers = {name: makers[name]() for name in cfg.attacks}
    p = target_empirical(A.labels, ds.m) if cfg.target == "empirical" else target_uniform(ds.m)
    return Experiment(defender, attackers, test, A, B, p)


# -- recommender utility ---------------------------------------------------------------

@dataclass(frozen=True)
class MfConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    l2_penalty: float = 0.01
    seed: int = 0
    init_scale: float = 0.1


@dataclass
class MfModel:
    P: np.ndarray  # user factors (n, rank)
    Q: np.ndarray  # item factors (d, rank)

    @property
    def rank(self) -> int:
        return self.P.shape[1]

    def scores(self) -> np.ndarray:
        return self.P @ self.Q.T


def _ratings(R):
    return np.asarray(R.X if isinstance(R, Dataset) else R, dtype=float)


def mf_train(R, rank: int = 10, cfg: MfConfig = MfConfig(), mask=None) -> MfModel:
    """Full-batch gradient descent on squared error over observed entries.

    Observed entries are the nonzero ratings unless ``mask`` says otherwise.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    R = _ratings(R)
    obs = (R != 0) if mask is None else np.asarray(mask, dtype=bool)
    n, d = R.shape
    rng = np.random.default_rng(cfg.seed)
    P = cfg.init_scale * rng.standard_normal((n, rank))
    Q = cfg.init_scale * rng.standard_normal((d, rank))
    per_user = np.maximum(obs.sum(axis=1), 1)[:, None]
    per_item = np.maximum(obs.sum(axis=0), 1)[:, None]
    lr, lam = cfg.learning_rate, cfg.l2_penalty
    for _ in range(cfg.epochs):
        E = np.where(obs, P @ Q.T - R, 0.0)
        # row-averaged gradients keep the step size independent of matrix size
        gP = E @ Q / per_user + lam * P
        gQ = E.T @ P / per_item + lam * Q
        P -= lr * gP
        Q -= lr * gQ
    return MfModel(P, Q)


def mf_rmse(model: MfModel, R, mask=None) -> float:
    R = _ratings(R)
    obs = (R != 0) if mask is None else np.asarray(mask, dtype=bool)
    err = (model.scores() - R)[obs]
    return float(np.sqrt(np.mean(err ** 2)))


def holdout_split(R, n_holdout: int = 5, seed=None):
    """Hide ``n_holdout`` rated items per user.

    Returns (training matrix, holdout array). Users with fewer than
    ``n_holdout`` ratings get a row of -1 and are skipped by the precision
    metric.
    """
    R = _ratings(R)
    rng = as_rng(seed)
    train = R.copy()
    hold = np.full((R.shape[0], n_holdout), -1, dtype=int)
    for u in range(R.shape[0]):
        rated = np.flatnonzero(R[u])
        if rated.size < n_holdout:
            continue
        pick = np.sort(rng.choice(rated, n_holdout, replace=False))
        hold[u] = pick
        train[u, pick] = 0.0
    return train, hold


def topn_items(scores_row: np.ndarray, exclude: np.ndarray, N: int) -> np.ndarray:
    """Top-N unexcluded items by score, ties to the lower item index."""
    cand = np.flatnonzero(~exclude)
    order = cand[np.lexsort((cand, -scores_row[cand]))]
    return order[:N]


def mf_topn_precision(model, R_train, holdout: np.ndarray, N: int = 10, require_unobserved: bool = True) -> float:
    """Mean over users of |topN ∩ holdout| / N.

    ``model`` may be an ``MfModel`` or a raw (n, d) score matrix. Items
    observed in ``R_train`` are never recommended. With
    ``require_unobserved=False`` a holdout item that is observed in
    ``R_train`` (a defense filled it in) simply counts as a miss.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    R_train = _ratings(R_train)
    S = model.scores() if isinstance(model, MfModel) else np.asarray(model, dtype=float)
    holdout = np.asarray(holdout, dtype=int)
    precisions = []
    for u in range(R_train.shape[0]):
        if holdout[u, 0] < 0:
            continue
        if require_unobserved and np.any(R_train[u, holdout[u]] != 0):
            raise ValueError("holdout items must be excluded from training observations")
        top = topn_items(S[u], R_train[u] != 0, N)
        precisions.append(np.intersect1d(top, holdout[u]).size / N)
    if not precisions:
        raise ValueError("no user has a holdout set")
    return math.fsum(precisions) / len(precisions)


def relative_precision_loss(pre1: float, pre2: float) -> float:
    if pre1 <= 0:
        raise ValueError("pre1 must be > 0")
    return abs(pre1 - pre2) / pre1


def recsys_precision(R_clean, publish: Callable, N: int, rank: int = 10, cfg: MfConfig = MfConfig(),
                     holdout_seed=None):
    """(Pre1, Pre2): top-N precision from clean vs published training data.

    Five rated items per user are held out first; ``publish(train)`` maps the
    clean training matrix to what the users publish. Both MF models rank the
    items their own training data leaves unobserved, so a defense that fills
    in a held-out item makes it unrecommendable, as it would be for a real
    service. Zeroing held-out entries after the defense instead would leak
    them for dense defenses such as randomized response.
    """
    R_clean = _ratings(R_clean)
    train, hold = holdout_split(R_clean, 5, holdout_seed)
    published = _ratings(publish(train.copy()))
    if published.shape != train.shape:
        raise ValueError("publish must preserve the matrix shape")
    pre1 = mf_topn_precision(mf_train(train, rank, cfg), train, hold, N)
    pre2 = mf_topn_precision(mf_train(published, rank, cfg), published, hold, N, require_unobserved=False)
    return pre1, pre2
