"""Phase I: minimum-L0 targeted noise under a noise-type policy.

``panda`` greedily modifies one entry per iteration, choosing the entry and
direction (increase or decrease) with the largest predicted gain in the
target margin ``logit_i - max_{j != i} logit_j``. ``jsma`` is the same
loop with a single direction committed for the whole run, and ``fgsm`` takes
one signed-gradient step. All three return grid-valid noise.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .classify import margin, margin_gradient
from .core import NoiseTypePolicy, RatingGrid, l0_norm, policy_feasible_indices


@dataclass(frozen=True)
class PandaConfig:
    tau: float = 1.0
    max_iters: int = 100
    policy: NoiseTypePolicy = NoiseTypePolicy.MODIFY_ADD
    grid: RatingGrid = RatingGrid()

    def __post_init__(self):
        object.__setattr__(self, "policy", NoiseTypePolicy.parse(self.policy))
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class EvasionResult:
    target: int
    noise: np.ndarray
    l0_cost: int
    iterations: int
    success: bool


def _finish(x, x_adv, target, iterations, success) -> EvasionResult:
    noise = x_adv - x
    noise[np.abs(noise) <= 1e-12] = 0.0
    return EvasionResult(int(target), noise, l0_norm(noise), int(iterations), bool(success))


def _best_move(g, x_adv, feasible, directions, tau, top):
    """Highest positive-score (index, direction) over feasible entries.

    A move's score is its first-order margin gain ``direction * g_k * step``,
    where ``step`` is the change actually realised after clipping.
    """
    best = None
    best_score = 0.0
    xs = x_adv[feasible]
    for direction in directions:
        step = np.minimum(tau, top - xs) if direction > 0 else np.minimum(tau, xs)
        scores = np.where(step > 0, direction * g[feasible] * step, -np.inf)
        if scores.size == 0:
            continue
        j = int(np.argmax(scores))
        if scores[j] > best_score:
            best_score = float(scores[j])
            best = (int(feasible[j]), direction)
    return best, best_score


def _greedy_search(model, x, target, cfg: PandaConfig, directions, feasible, trace=None) -> EvasionResult:
    grid = cfg.grid
    top = grid.max_value
    x_adv = x.copy()
    it = 0
    while it < cfg.max_iters:
        if model.predict(x_adv) == target:
            snapped = grid.snap(x_adv)
            x_adv = snapped
            if model.predict(snapped) == target:
                return _finish(x, x_adv, target, it, True)
        g = margin_gradient(model, x_adv, target)
        move, _ = _best_move(g, x_adv, feasible, directions, cfg.tau, top)
        if move is None:
            break
        k, direction = move
        x_adv[k] = min(max(x_adv[k] + direction * cfg.tau, 0.0), top)
        it += 1
        if trace is not None:
            trace.append((it, k, direction, margin(model, x_adv, target)))
    x_adv = grid.snap(x_adv)
    return _finish(x, x_adv, target, it, model.predict(x_adv) == target)


def _validate(model, x, target):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.d,):
        raise ValueError(f"x must have shape ({model.d},)")
    if not 0 <= target < model.m:
        raise ValueError(f"target must lie in [0, {model.m})")
    return x


def panda(model, x, target: int, cfg: PandaConfig = PandaConfig(), trace: Optional[list] = None) -> EvasionResult:
    """Policy-aware greedy noise search towards label ``target``.

    ``trace``, if a list, receives ``(iteration, index, direction, margin)``
    tuples, one per modification.
    """
    x = _validate(model, x, target)
    if model.predict(x) == target:
        return _finish(x, x.copy(), target, 0, True)
    feasible = policy_feasible_indices(x, cfg.policy)
    return _greedy_search(model, x, target, cfg, (1, -1), feasible, trace)


def jsma(model, x, target: int, cfg: PandaConfig = PandaConfig(), trace: Optional[list] = None) -> EvasionResult:
    """One-entry saliency search with a single committed direction (Modify_Add)."""
    x = _validate(model, x, target)
    if model.predict(x) == target:
        return _finish(x, x.copy(), target, 0, True)
    feasible = np.arange(x.size)
    g = margin_gradient(model, x, target)
    top = cfg.grid.max_value
    _, up = _best_move(g, x, feasible, (1,), cfg.tau, top)
    _, down = _best_move(g, x, feasible, (-1,), cfg.tau, top)
    direction = 1 if up >= down else -1
    return _greedy_search(model, x, target, cfg, (direction,), feasible, trace)


def fgsm(model, x, target: int, epsilon: float = 1.0, grid: RatingGrid = RatingGrid()) -> EvasionResult:
    """Single targeted signed-gradient step, clipped and snapped to the grid."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    x = _validate(model, x, target)
    g = margin_gradient(model, x, target)
    x_adv = grid.snap(np.clip(x + epsilon * np.sign(g), 0.0, grid.max_value))
    return _finish(x, x_adv, target, 1, model.predict(x_adv) == target)


def find_all_noises(model, x, policy=None, cfg: PandaConfig = PandaConfig()) -> List[EvasionResult]:
    """One representative PANDA noise per attribute value.

    ``policy``, when given, overrides ``cfg.policy``.
    """
    if policy is not None:
        cfg = replace(cfg, policy=NoiseTypePolicy.parse(policy))
    return [panda(model, x, i, cfg) for i in range(model.m)]
