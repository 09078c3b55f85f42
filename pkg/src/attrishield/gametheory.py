"""Game-theoretic obfuscation over a finite public-data domain.

The defender picks a row-stochastic matrix ``f[x, x']`` minimising the
optimal attacker's expected privacy loss subject to an expected utility-loss
budget. The problem is a linear program; it is solved here with a dense
two-phase tableau simplex using Bland's rule, which is only practical for
toy domains.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

MAX_DOMAIN = 64
PIVOT_TOL = 1e-10


class DomainTooLargeError(ValueError):
    pass


class LPInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class ObfuscationMatrix:
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        object.__setattr__(self, "f", f)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError("f must be square")
        if np.any(f < -1e-12) or np.any(np.abs(f.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("f must be row-stochastic")


def zero_one_loss(n: int) -> np.ndarray:
    """d_p(s, s_hat) = 1 when the attacker guesses right."""
    return np.eye(n)


def _as_f(f):
    return np.asarray(getattr(f, "f", f), dtype=float)


def _check_joint(joint):
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2 or np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint must be a non-negative (|S|, |X|) table summing to 1")
    return joint


def expected_utility_loss(f, joint, d_q) -> float:
    f = _as_f(f)
    joint = _check_joint(joint)
    d_q = np.asarray(d_q, dtype=float)
    if f.shape != d_q.shape or f.shape[0] != joint.shape[1]:
        raise ValueError("shape mismatch between f, joint and d_q")
    px = joint.sum(axis=0)
    # d_q[x', x] weights the move x -> x'
    return float(np.sum(px[:, None] * f * d_q.T))


def _guess_gain(f, joint, d_p):
    """(|X'|, |S_hat|) matrix of sum_s sum_x Pr(s,x) f(x'|x) d_p(s, s_hat)."""
    return f.T @ joint.T @ d_p


def expected_privacy_loss(f, joint, d_p) -> float:
    f = _as_f(f)
    joint = _check_joint(joint)
    d_p = np.asarray(d_p, dtype=float)
    if f.shape[0] != joint.shape[1] or d_p.shape[0] != joint.shape[0]:
        raise ValueError("shape mismatch between f, joint and d_p")
    return float(_guess_gain(f, joint, d_p).max(axis=1).sum())


# -- dense simplex -------------------------------------------------------------

def _pivot(T, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T, basis, n_cols, max_pivots):
    """Bland's-rule iterations on tableau T whose last row is the cost row."""
    for _ in range(max_pivots):
        cost = T[-1, :n_cols]
        entering = np.flatnonzero(cost < -PIVOT_TOL)
        if entering.size == 0:
            return
        c = int(entering[0])
        col = T[:-1, c]
        pos = np.flatnonzero(col > PIVOT_TOL)
        if pos.size == 0:
            raise LPInfeasibleError("LP is unbounded")
        ratios = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, c)
        basis[r] = c
    raise RuntimeError("simplex pivot limit reached")


def simplex(c, A_ub, b_ub, A_eq, b_eq, max_pivots: int = 200_000):
    """min c.x s.t. A_ub x <= b_ub, A_eq x = b_eq, x >= 0 (b >= 0 required).

    Returns (x, objective).
    """
    c = np.asarray(c, dtype=float)
    A_ub = np.asarray(A_ub, dtype=float).reshape(-1, c.size)
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, c.size)
    b_ub = np.asarray(b_ub, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    if np.any(b_ub < 0) or np.any(b_eq < 0):
        raise ValueError("right-hand sides must be non-negative")
    n, mu, me = c.size, A_ub.shape[0], A_eq.shape[0]
    rows = mu + me
    n_cols = n + mu + me
    T = np.zeros((rows + 1, n_cols + 1))
    T[:mu, :n] = A_ub
    T[:mu, n:n + mu] = np.eye(mu)
    T[mu:rows, :n] = A_eq
    T[mu:rows, n + mu:n_cols] = np.eye(me)
    T[:mu, -1] = b_ub
    T[mu:rows, -1] = b_eq
    basis = list(range(n, n_cols))

    # phase 1: minimise the artificial sum
    T[-1, n + mu:n_cols] = 1.0
    T[-1] -= T[mu:rows].sum(axis=0)
    _run_simplex(T, basis, n_cols, max_pivots)
    if -T[-1, -1] > 1e-8:
        raise LPInfeasibleError("LP is infeasible")

    # drive remaining artificials out of the basis, dropping redundant rows
    keep = []
    for r in range(rows):
        if basis[r] >= n + mu:
            cand = np.flatnonzero(np.abs(T[r, :n + mu]) > PIVOT_TOL)
            if cand.size == 0:
                continue
            _pivot(T, r, int(cand[0]))
            basis[r] = int(cand[0])
        keep.append(r)
    T = np.vstack([T[keep][:, list(range(n + mu)) + [n_cols]], np.zeros((1, n + mu + 1))])
    basis = [basis[r] for r in keep]

    # phase 2
    T[-1, :n] = c
    for r, bv in enumerate(basis):
        if T[-1, bv] != 0.0:
            T[-1] -= T[-1, bv] * T[r]
    _run_simplex(T, basis, n + mu, max_pivots)
    x = np.zeros(n + mu)
    for r, bv in enumerate(basis):
        x[bv] = T[r, -1]
    x = x[:n]
    return x, float(c @ x)


def solve_game_lp(joint, d_p, d_q, beta: float):
    """Optimal obfuscation matrix and its privacy-loss objective."""
    joint = _check_joint(joint)
    d_p = np.asarray(d_p, dtype=float)
    d_q = np.asarray(d_q, dtype=float)
    S, X = joint.shape
    if X > MAX_DOMAIN:
        raise DomainTooLargeError(f"|X|={X} exceeds the toy-domain limit {MAX_DOMAIN}")
    if beta < 0:
        raise LPInfeasibleError("beta must be >= 0")
    if d_p.shape != (S, S) or d_q.shape != (X, X):
        raise ValueError("d_p must be |S|x|S| and d_q |X|x|X|")
    nf = X * X
    px = joint.sum(axis=0)
    c = np.concatenate([np.zeros(nf), np.ones(X)])

    # f is flattened row-major: variable x*X + x'
    util = (px[:, None] * d_q.T).ravel()
    # gain[x, s_hat] = sum_s Pr(s, x) d_p(s, s_hat)
    gain = joint.T @ d_p
    A_ub = [np.concatenate([util, np.zeros(X)])]
    b_ub = [beta]
    for xp in range(X):
        for sh in range(S):
            row = np.zeros(nf + X)
            row[np.arange(X) * X + xp] = gain[:, sh]
            row[nf + xp] = -1.0
            A_ub.append(row)
            b_ub.append(0.0)
    A_eq = np.zeros((X, nf + X))
    for x in range(X):
        A_eq[x, x * X:(x + 1) * X] = 1.0
    sol, _ = simplex(c, np.array(A_ub), np.array(b_ub), A_eq, np.ones(X))
    f = np.clip(sol[:nf].reshape(X, X), 0.0, None)
    f /= f.sum(axis=1, keepdims=True)
    return ObfuscationMatrix(f), expected_privacy_loss(f, joint, d_p)


def brute_force_game(joint, d_p, d_q, beta: float, step: float = 0.01):
    """Grid search over 2x2 row-stochastic f = [[1-a, a], [b, 1-b]]."""
    joint = _check_joint(joint)
    if joint.shape[1] != 2:
        raise ValueError("brute force is only defined for |X| = 2")
    d_p = np.asarray(d_p, dtype=float)
    d_q = np.asarray(d_q, dtype=float)
    ticks = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    # F[..., x, x'] for every grid point
    F = np.stack([np.stack([1 - a, a], -1), np.stack([b, 1 - b], -1)], -2)
    px = joint.sum(axis=0)
    L = np.einsum("x,...xy,yx->...", px, F, d_q)
    gain = np.einsum("sx,...xy,st->...yt", joint, F, d_p)
    obj = gain.max(axis=-1).sum(axis=-1)
    obj = np.where(L <= beta + 1e-12, obj, np.inf)
    # first minimiser in (a, b) scan order
    k = int(np.argmin(obj))
    if not np.isfinite(obj.flat[k]):
        raise LPInfeasibleError("no feasible mapping on the grid")
    i, j = np.unravel_index(k, obj.shape)
    return ObfuscationMatrix(F[i, j]), float(obj[i, j])


# -- files -------------------------------------------------------------------------

def load_instance(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    joint = np.asarray(obj["joint"], dtype=float)
    S, X = int(obj["S"]), int(obj["X"])
    if joint.shape != (S, X):
        raise ValueError(f"joint table must be {S}x{X}")
    d_p = np.asarray(obj.get("d_p", zero_one_loss(S)), dtype=float)
    d_q = np.asarray(obj.get("d_q", 1.0 - np.eye(X)), dtype=float)
    return {"joint": joint, "d_p": d_p, "d_q": d_q, "beta": float(obj["beta"])}


def write_solution(path, f, objective: float) -> None:
    f = _as_f(f)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"x'={j}" for j in range(f.shape[1])])
        for i, row in enumerate(f):
            w.writerow([i] + [f"{v:.6f}" for v in row])
        w.writerow(["objective", f"{objective:.6f}"])
