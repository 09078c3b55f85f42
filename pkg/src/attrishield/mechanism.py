"""Phase II: the KL-optimal randomized choice among representative noises.

Given target distribution p, per-value noise costs c_i = ||r_i||_0 and a
budget beta, ``solve_mechanism`` returns

    M* = argmin_M KL(p || M)  s.t.  sum_i M_i c_i <= beta,  M on the simplex,

in the closed form M_i = p_i / (mu0 * c_i + lambda). Values whose Phase I
search failed carry c_i = inf and are excluded (p is renormalised over the
rest).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .core import NoiseTypePolicy, RatingGrid, apply_noise, as_rng, check_probability
from .evade import EvasionResult, PandaConfig, find_all_noises

INNER_TOL = 1e-12
BUDGET_TOL = 1e-12  # on costs normalised to max finite cost 1


class InfeasibleBudgetError(ValueError):
    pass


def target_uniform(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.full(m, 1.0 / m)


def target_empirical(labels, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("need at least one label")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m})")
    return np.bincount(labels, minlength=m) / labels.size


@dataclass(frozen=True)
class SolverReport:
    mu0: float
    lam: float
    binding: bool
    kkt_residual: float
    expected_cost: float
    excluded: tuple = ()


@dataclass(frozen=True)
class MechanismDistribution:
    M: np.ndarray
    costs: np.ndarray


def _solve_lambda(p, c, mu0, floor_cost):
    """lambda with sum_i p_i / (mu0 c_i + lambda) = 1.

    ``floor_cost`` is the cost of the cheapest zero-target value that may
    absorb leftover mass (or None). Returns (lambda, leftover mass).
    """
    cmin = min(c)
    lo = -mu0 * cmin
    if floor_cost is not None and floor_cost < cmin:
        lo_floor = -mu0 * floor_cost
        total = math.fsum(pi / (mu0 * (ci - floor_cost)) for pi, ci in zip(p, c)) if mu0 > 0 else math.inf
        if total <= 1.0:
            return lo_floor, 1.0 - total
        lo = lo_floor
    hi = 1.0 - mu0 * cmin
    lo = max(lo, 1.0 - mu0 * max(c))
    # sum decreases in lambda: g(lo) >= 1 >= g(hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = math.fsum(pi / (mu0 * ci + mid) if mu0 * ci + mid > 0 else math.inf for pi, ci in zip(p, c))
        if abs(s - 1.0) <= INNER_TOL:
            return mid, 0.0
        if s > 1.0:
            lo = mid
        else:
            hi = mid
    return hi, 0.0


def _closed_form(p, c, mu0, floor_cost):
    lam, leftover = _solve_lambda(p, c, mu0, floor_cost)
    M = [pi / (mu0 * ci + lam) for pi, ci in zip(p, c)]
    cost = math.fsum(mi * ci for mi, ci in zip(M, c)) + (leftover * floor_cost if leftover > 0 else 0.0)
    return lam, M, leftover, cost


def solve_mechanism(p, costs, beta: float):
    """Minimise KL(p||M) subject to the expected-cost budget.

    Returns ``(MechanismDistribution, SolverReport)``. Entries with
    ``costs[i] = inf`` get zero mass; entries with zero target mass get mass
    only if the budget cannot be met otherwise.
    """
    p = check_probability(p)
    c_all = np.asarray(costs, dtype=float)
    if c_all.shape != p.shape:
        raise ValueError("costs and p must have the same length")
    if beta < 0:
        raise InfeasibleBudgetError("beta must be >= 0")
    if np.any(c_all < 0) or np.any(np.isnan(c_all)):
        raise ValueError("costs must be non-negative")
    finite = np.isfinite(c_all)
    if not finite.any():
        raise InfeasibleBudgetError("every noise cost is infinite")
    excluded = tuple(int(i) for i in np.flatnonzero(~finite))

    p_hat = np.where(finite, p, 0.0)
    if p_hat.sum() <= 0:
        # all target mass sits on failed values; fall back to uniform over the rest
        p_hat = finite.astype(float)
    p_hat = p_hat / p_hat.sum()

    m = p.size
    M = np.zeros(m)
    support = np.flatnonzero(p_hat > 0)
    zero_target = np.flatnonzero(finite & (p_hat == 0))
    floor_idx = int(zero_target[np.argmin(c_all[zero_target])]) if zero_target.size else None
    floor_cost = float(c_all[floor_idx]) if floor_idx is not None else None

    ps = p_hat[support].tolist()
    cs = c_all[support].tolist()
    free_cost = math.fsum(pi * ci for pi, ci in zip(ps, cs))
    if free_cost <= beta:
        M[support] = p_hat[support]
        rep = SolverReport(0.0, 1.0, False, 0.0, free_cost, excluded)
        return MechanismDistribution(M, c_all), rep

    reachable = min(cs) if floor_cost is None else min(min(cs), floor_cost)
    if beta < reachable:
        raise InfeasibleBudgetError(f"budget {beta} below the cheapest available noise cost {reachable}")

    if beta <= reachable + 1e-12:
        # degenerate point: all mass on the cheapest values
        cheap = [k for k, ck in zip(support, cs) if ck <= reachable]
        if cheap:
            M[cheap] = p_hat[cheap] / p_hat[cheap].sum()
        else:
            M[floor_idx] = 1.0
        mu0, lam = math.inf, math.nan
        return MechanismDistribution(M, c_all), SolverReport(mu0, lam, True, 0.0, float(M @ np.where(finite, c_all, 0.0)), excluded)

    # work in units where the largest finite cost is 1, so that rescaling
    # all costs and beta together gives the same M
    scale = max(cs) if floor_cost is None else max(max(cs), floor_cost)
    cs_n = [ci / scale for ci in cs]
    floor_n = None if floor_cost is None else floor_cost / scale
    beta_n = beta / scale
    lo, hi = 0.0, 1.0
    while _closed_form(ps, cs_n, hi, floor_n)[3] > beta_n:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise InfeasibleBudgetError("could not bracket the budget multiplier")
    mu0 = hi
    for _ in range(400):
        mu0 = 0.5 * (lo + hi)
        lam, Ms, leftover, cost = _closed_form(ps, cs_n, mu0, floor_n)
        if abs(cost - beta_n) <= BUDGET_TOL:
            break
        if cost > beta_n:
            lo = mu0
        else:
            hi = mu0
    lam, Ms, leftover, cost = _closed_form(ps, cs_n, mu0, floor_n)
    M[support] = Ms
    if leftover > 0:
        M[floor_idx] = leftover
    total = M.sum()
    M = M / total
    mu0 = mu0 / scale
    resid = max(abs(pi - M[k] * (mu0 * ck + lam)) for k, pi, ck in zip(support, ps, cs))
    expected = float(math.fsum(M[finite] * c_all[finite]))
    return MechanismDistribution(M, c_all), SolverReport(mu0, lam, True, resid, expected, excluded)


def sample_noise(M, noises: Sequence[np.ndarray], seed=None):
    """Inverse-CDF draw of one representative noise; returns (index, noise)."""
    M = np.asarray(M.M if isinstance(M, MechanismDistribution) else M, dtype=float)
    if abs(M.sum() - 1.0) > 1e-9 or np.any(M < 0):
        raise ValueError("M is not a probability vector")
    u = as_rng(seed).random()
    idx = int(np.searchsorted(np.cumsum(M), u, side="right"))
    positive = np.flatnonzero(M > 0)
    idx = min(idx, int(positive[-1]))
    return idx, noises[idx]


@dataclass(frozen=True)
class DefenseOutcome:
    x_noisy: np.ndarray
    chosen: int
    noise: np.ndarray
    cost: float
    mechanism: MechanismDistribution
    report: SolverReport
    evasions: tuple


def costs_from_evasions(results: List[EvasionResult]) -> np.ndarray:
    return np.array([float(r.l0_cost) if r.success else np.inf for r in results])


def defend_from_evasions(x, results: List[EvasionResult], p, beta: float, seed, grid=None) -> DefenseOutcome:
    """Phase II on precomputed Phase I results (lets budget sweeps reuse Phase I)."""
    grid = grid or RatingGrid()
    costs = costs_from_evasions(results)
    mech, report = solve_mechanism(p, costs, beta)
    idx, r = sample_noise(mech, [res.noise for res in results], seed)
    x_noisy = apply_noise(x, r, grid)
    return DefenseOutcome(x_noisy, idx, r, float(costs[idx]), mech, report, tuple(results))


def defend_user(defender_model, x, policy, p, beta: float, cfg: PandaConfig = PandaConfig(),
                seed=None) -> DefenseOutcome:
    """Both phases for one user; ``x_noisy`` is the published vector."""
    x = np.asarray(x, dtype=float)
    if policy is not None:
        cfg = replace(cfg, policy=NoiseTypePolicy.parse(policy))
    results = find_all_noises(defender_model, x, cfg=cfg)
    return defend_from_evasions(x, results, p, beta, seed, cfg.grid)
