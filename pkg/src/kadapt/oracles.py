"""Brute-force references for small instances.

These enumerate or grid-search directly and share no code with the solvers
they are used to check.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .core import EPS_VAL, ConstraintKind, Instance, ObjectiveKind


def _serve(masked: np.ndarray, subset: Sequence[int]):
    sub = masked[list(subset)]
    best = sub.min(axis=0)
    arg = [subset[int(k)] for k in sub.argmin(axis=0)]
    return best, arg


def enumerate_worst_case(masked: np.ndarray, K: int) -> float:
    """min over nonempty subsets of at most K rows of max_j min_i masked[i, j]."""
    n = masked.shape[0]
    best = np.inf
    for k in range(1, min(K, n) + 1):
        for subset in itertools.combinations(range(n), k):
            best = min(best, float(_serve(masked, subset)[0].max()))
    return best


def enumerate_pareto(masked: np.ndarray, K: int, w_star: float, eps: float = EPS_VAL):
    """Lexicographically first effective subset with least sum among those with worst <= w_star + eps.

    Returns ``(subset, assignment, total)``; ``None`` when nothing qualifies.
    """
    n = masked.shape[0]
    rows = []
    for k in range(1, min(K, n) + 1):
        for subset in itertools.combinations(range(n), k):
            best, arg = _serve(masked, subset)
            if not np.all(np.isfinite(best)) or best.max() > w_star + eps:
                continue
            if set(arg) != set(subset):
                continue
            rows.append((float(best.sum()), subset, tuple(arg)))
    if not rows:
        return None
    opt = min(r[0] for r in rows)
    subset, arg, total = min(((s, a, t) for t, s, a in rows if t <= opt + eps), key=lambda r: r[0])
    return subset, arg, total


def enumerate_k_medoids(L: np.ndarray, K: int, eps: float = EPS_VAL):
    """Optimal cost and lexicographically first effective medoid set."""
    return enumerate_pareto(np.asarray(L, float), K, np.inf, eps)


def grid_search_robust(instance: Instance, cluster: Sequence[int], steps: int = 1000) -> float:
    """Best worst-case value over a dense grid of weight vectors (1 or 2 beamlets).

    The box is ``0 <= x_j <= u_j`` with ``u_j`` the largest weight beamlet j may
    take alone under the max-dose constraints.  The grid step is 1/steps of the
    box diameter along each axis.
    """
    n = instance.n_beamlets
    if n > 2:
        raise ValueError("grid search supports at most 2 beamlets")
    if instance.objective.kind is not ObjectiveKind.MIN_DOSE_IN_TARGET:
        raise ValueError("grid search supports the min-dose objective only")
    upper = np.full(n, np.inf)
    for s in cluster:
        D = instance.scenarios[s].dose_matrix.toarray()
        for con in instance.constraints:
            if con.kind is not ConstraintKind.MAX_DOSE:
                continue
            rows = D[instance.structures[con.structure]]
            for j in range(n):
                col = rows[:, j]
                if col.max() > 0:
                    upper[j] = min(upper[j], con.bound / col.max())
    upper = np.where(np.isfinite(upper), upper, 0.0)
    diameter = float(np.linalg.norm(upper))
    if diameter == 0:
        return 0.0
    h = diameter / steps
    axes = [np.unique(np.append(np.arange(0.0, u, h), u)) if u > 0 else np.zeros(1) for u in upper]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
    worst = np.full(grid.shape[1], -np.inf)
    ok = np.ones(grid.shape[1], dtype=bool)
    target = instance.structures[instance.objective.structure]
    for s in cluster:
        D = instance.scenarios[s].dose_matrix.toarray()
        worst = np.maximum(worst, -(D[target] @ grid).min(axis=0))
        for con in instance.constraints:
            d = D[instance.structures[con.structure]] @ grid
            stat = d.max(axis=0) if con.kind is ConstraintKind.MAX_DOSE else d.mean(axis=0)
            ok &= stat <= con.bound * (1 + 1e-12)
    return float(worst[ok].min())
