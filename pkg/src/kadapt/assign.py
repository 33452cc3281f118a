"""Exact plan-to-scenario assignment and K-medoids.

Both assignment MIPs and the K-medoids MIP are facility-location problems in
which, once the set of open facilities (selected plans or medoids) is fixed,
every client (scenario) simply goes to its cheapest open facility.  They are
therefore solved over facility subsets directly:

* the worst-case problem by a search over the sorted distinct values, each
  candidate threshold checked with an exact bounded set cover;
* the sum problems (Pareto step, K-medoids) by a p-median branch and bound.

Deterministic tie rules: within a selection a scenario goes to its cheapest
plan, lowest id first.  Among optimal selections the lexicographically
smallest sorted id tuple wins, counting only selections in which every plan
serves at least one scenario.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import (
    EPS_VAL,
    DimensionMismatchError,
    Instance,
    KAdaptError,
    Partition,
    ValueMatrix,
    canonicalize_partition,
)


class UnassignableScenarioError(KAdaptError, ValueError):
    def __init__(self, message: str, scenario_ids: Sequence[int] = ()):
        super().__init__(message)
        self.scenario_ids = tuple(scenario_ids)


class InfeasibleThresholdError(KAdaptError, ValueError):
    pass


@dataclass(frozen=True)
class AssignmentResult:
    selected: tuple[int, ...]
    assignment: tuple[int, ...]
    worst_case: float
    avg_sum: float
    partition: Partition


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray

    def __post_init__(self):
        L = np.array(self.values, dtype=np.float64, ndmin=2)
        if L.shape[0] != L.shape[1]:
            raise ValueError("distance matrix must be square")
        if np.any(L < 0) or np.any(np.diag(L) != 0) or not np.array_equal(L, L.T):
            raise ValueError("distance matrix must be symmetric, nonnegative, zero on the diagonal")
        L.setflags(write=False)
        object.__setattr__(self, "values", L)

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class KMedoidsResult:
    medoids: tuple[int, ...]
    assignment: tuple[int, ...]
    total_cost: float

    def clusters(self) -> Partition:
        groups: dict[int, list[int]] = {}
        for b, a in enumerate(self.assignment):
            groups.setdefault(a, []).append(b)
        return canonicalize_partition(groups.values())


# ---------------------------------------------------------------------------
# helpers


def _assign_rows(cost: np.ndarray, rows: Sequence[int]) -> np.ndarray:
    """Row index serving each column: cheapest, lowest row on ties."""
    rows = sorted(rows)
    sub = cost[rows]
    return np.asarray(rows)[np.argmin(sub, axis=0)]


def _partition_of(assign_rows: np.ndarray, plan_ids: Sequence[int]) -> Partition:
    groups: dict[int, list[int]] = {}
    for j, r in enumerate(assign_rows):
        groups.setdefault(int(r), []).append(j)
    return canonicalize_partition(groups.values())


def _check_assignable(masked: np.ndarray, scenario_ids: Sequence[int]):
    empty = np.flatnonzero(~np.isfinite(masked).any(axis=0))
    if empty.size:
        ids = [scenario_ids[j] for j in empty]
        raise UnassignableScenarioError(f"no feasible plan for scenarios {ids}", ids)


def _result(values: ValueMatrix, masked: np.ndarray, rows: Sequence[int]) -> AssignmentResult:
    arow = _assign_rows(masked, rows)
    served = masked[arow, np.arange(masked.shape[1])]
    pid = values.plan_ids
    return AssignmentResult(
        selected=tuple(pid[r] for r in sorted(rows)),
        assignment=tuple(pid[r] for r in arow),
        worst_case=float(served.max()),
        avg_sum=float(served.sum()),
        partition=_partition_of(arow, pid),
    )


# ---------------------------------------------------------------------------
# bounded set cover


def _cover_within(masks: Sequence[int], full: int, k: int) -> list[int] | None:
    """Indices of at most ``k`` masks whose union is ``full``, or None."""
    # drop empty, duplicate and dominated masks (keep the lowest index)
    order = sorted(range(len(masks)), key=lambda i: (-bin(masks[i]).count("1"), i))
    kept: list[int] = []
    for i in order:
        m = masks[i]
        if m == 0 or any(masks[j] | m == masks[j] for j in kept):
            continue
        kept.append(i)
    if not kept:
        return [] if full == 0 else None
    kept.sort()
    nbits = full.bit_length()
    covering = {e: [i for i in kept if masks[i] >> e & 1] for e in range(nbits) if full >> e & 1}
    if any(not v for v in covering.values()):
        return None
    failed: set[tuple[int, int]] = set()

    def search(uncovered: int, budget: int) -> list[int] | None:
        if uncovered == 0:
            return []
        if budget == 0 or (uncovered, budget) in failed:
            return None
        best_gain = max(bin(masks[i] & uncovered).count("1") for i in kept)
        if -(-bin(uncovered).count("1") // best_gain) > budget:
            failed.add((uncovered, budget))
            return None
        elem = min(
            (e for e in covering if uncovered >> e & 1),
            key=lambda e: (sum(1 for i in covering[e] if masks[i] & uncovered), e),
        )
        options = sorted(covering[elem], key=lambda i: (-bin(masks[i] & uncovered).count("1"), i))
        for i in options:
            rest = search(uncovered & ~masks[i], budget - 1)
            if rest is not None:
                return [i] + rest
        failed.add((uncovered, budget))
        return None

    return search(full, k)


def _threshold_cover(masked: np.ndarray, theta: float, k: int) -> list[int] | None:
    ok = np.isfinite(masked) & (masked <= theta)
    masks = [int(sum(1 << j for j in np.flatnonzero(row))) for row in ok]
    full = (1 << masked.shape[1]) - 1
    return _cover_within(masks, full, k)


# ---------------------------------------------------------------------------
# MIP (worst case)


def solve_assignment_worst_case(values: ValueMatrix, K: int) -> AssignmentResult:
    """Exact minimum over selections of at most K plans of the worst scenario value.

    Only ``worst_case`` is canonical; the selection is whichever cover the
    search found first.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    masked = values.masked()
    _check_assignable(masked, values.scenario_ids)
    lower = float(np.min(masked, axis=0).max())
    candidates = np.unique(masked[np.isfinite(masked)])
    candidates = candidates[candidates >= lower]
    cover = _threshold_cover(masked, candidates[-1], K)
    if cover is None:
        raise UnassignableScenarioError(
            f"the scenarios cannot be covered by {K} feasible plans", values.scenario_ids
        )
    lo, hi = 0, len(candidates) - 1
    best = cover
    while lo < hi:
        mid = (lo + hi) // 2
        found = _threshold_cover(masked, candidates[mid], K)
        if found is None:
            lo = mid + 1
        else:
            hi, best = mid, found
    return _result(values, masked, best)


# ---------------------------------------------------------------------------
# p-median branch and bound


class _PMedian:
    """min over row subsets S, |S| <= K, of sum_j min_{i in S} cost[i, j].

    ``cost`` may contain ``inf`` for forbidden (row, column) pairs.
    """

    def __init__(self, cost: np.ndarray, K: int):
        self.K = K
        n, m = cost.shape
        # identical rows never appear in the lexicographically first answer
        keep, seen = [], set()
        for i in range(n):
            key = cost[i].tobytes()
            if key in seen or not np.isfinite(cost[i]).any():
                continue
            seen.add(key)
            keep.append(i)
        self.rows = np.asarray(keep, dtype=np.int64)
        self.cost = cost[self.rows]
        self.n, self.m = self.cost.shape
        self.finite = np.isfinite(self.cost)
        suffix = np.full((self.n + 1, m), np.inf)
        for i in range(self.n - 1, -1, -1):
            suffix[i] = np.minimum(suffix[i + 1], self.cost[i])
        self.suffix_min = suffix
        self._init_lagrangian()

    def _init_lagrangian(self):
        """Multipliers for the assignment rows, taken from the LP relaxation duals.

        For any multipliers ``lam`` the relaxed problem gives a valid bound::

            sum(lam) + sum_j min(0, cur_j - lam_j) + (budget most negative rho_i)

        with ``rho_i = sum_j min(0, cost_ij - lam_j)`` over the free rows.
        """
        self.lp_rows: list[int] = []
        lam = self._lp_duals()
        if lam is None:
            lam = np.where(self.finite, self.cost, np.inf).min(axis=0)
        self.lam = lam
        diff = np.where(self.finite, self.cost - lam, 0.0)
        rho = np.minimum(diff, 0.0).sum(axis=1)
        # best[start, b]: sum of the b most negative rho over rows >= start
        best = np.zeros((self.n + 1, self.K + 1))
        for start in range(self.n - 1, -1, -1):
            tail = np.sort(rho[start:])[: self.K]
            best[start, 1 : tail.size + 1] = np.cumsum(tail)
            best[start, tail.size + 1 :] = best[start, tail.size]
        self.rho_best = best

    def _lp_duals(self) -> np.ndarray | None:
        n, m = self.n, self.m
        ii, jj = np.nonzero(self.finite)
        nz = ii.size
        if nz == 0:
            return None
        # variables: z (one per finite cell), then y
        c = np.concatenate([self.cost[ii, jj], np.zeros(n)])
        k = np.arange(nz)
        A_eq = sp.csr_matrix((np.ones(nz), (jj, k)), shape=(m, nz + n))
        link = sp.csr_matrix(
            (np.concatenate([np.ones(nz), -np.ones(nz)]), (np.concatenate([k, k]), np.concatenate([k, nz + ii]))),
            shape=(nz, nz + n),
        )
        card = sp.csr_matrix((np.ones(n), (np.zeros(n, dtype=int), nz + np.arange(n))), shape=(1, nz + n))
        res = linprog(
            c,
            A_ub=sp.vstack([link, card], format="csr"),
            b_ub=np.concatenate([np.zeros(nz), [self.K]]),
            A_eq=A_eq,
            b_eq=np.ones(m),
            bounds=[(0, None)] * nz + [(0, 1)] * n,
            method="highs",
        )
        if res.status != 0:
            return None
        y = res.x[nz:]
        self.lp_rows = [int(i) for i in np.flatnonzero(y > 0.5)]
        return np.asarray(res.eqlin.marginals, dtype=float)

    def lagrangian_bound(self, cur: np.ndarray, start: int, budget: int) -> float:
        fixed = np.minimum(np.where(np.isfinite(cur), cur - self.lam, 0.0), 0.0).sum()
        return float(self.lam.sum() + fixed + self.rho_best[start, min(budget, self.K)])

    # lower bound on the best completion of a node -------------------------
    def bound(self, cur: np.ndarray, start: int, budget: int) -> float:
        best_r = self.suffix_min[start]
        lb1 = float(np.minimum(cur, best_r).sum())
        if not np.isfinite(lb1) or budget == 0:
            return lb1
        uncovered = ~np.isfinite(cur)
        if uncovered.any():
            reach = self.finite[start:][:, uncovered].sum(axis=1).max()
            if -(-int(uncovered.sum()) // int(reach)) > budget:
                return np.inf
        return max(lb1, self.lagrangian_bound(cur, start, budget))

    def exact_completion(self, cur: np.ndarray, start: int, budget: int) -> list[int] | None:
        """Rows reaching the unconstrained bound, if no more than ``budget``."""
        best_r = self.suffix_min[start]
        improve = best_r < cur
        if not improve.any():
            return []
        sub = self.cost[start:, improve]
        picks = sorted({start + int(i) for i in np.argmin(sub, axis=0)})
        return picks if len(picks) <= budget else None

    # heuristic incumbent --------------------------------------------------
    def _total(self, rows: Sequence[int]) -> float:
        if not rows:
            return np.inf
        return float(self.cost[list(rows)].min(axis=0).sum())

    def greedy(self, seed: Sequence[int] = ()) -> tuple[list[int], float]:
        sel = sorted(seed)
        cur = self.cost[sel].min(axis=0) if sel else np.full(self.m, np.inf)

        def score(c):
            return (int((~np.isfinite(c)).sum()), float(np.where(np.isfinite(c), c, 0.0).sum()))

        while len(sel) < self.K:
            best = None
            for i in range(self.n):
                if i in sel:
                    continue
                s = score(np.minimum(cur, self.cost[i]))
                if best is None or s < best[0]:
                    best = (s, i)
            if best is None or best[0] >= score(cur):
                break
            sel.append(best[1])
            cur = np.minimum(cur, self.cost[best[1]])
        total = self._total(sel)
        improved = True
        while improved and np.isfinite(total):
            improved = False
            for a in list(sel):
                for b in range(self.n):
                    if b in sel:
                        continue
                    trial = [r for r in sel if r != a] + [b]
                    t = self._total(trial)
                    if t < total - 1e-12 * (1 + abs(total)):
                        sel, total, improved = trial, t, True
                        break
                if improved:
                    break
        return sorted(sel), total

    # pass 1: optimal value ------------------------------------------------
    def optimum(self, seed: Sequence[int] = ()) -> float:
        _, inc = self.greedy(seed)
        if seed:
            inc = min(inc, self._total(list(seed)))
        if 0 < len(self.lp_rows) <= self.K:
            inc = min(inc, self._total(self.lp_rows))
        best = [inc]

        def tol(v):
            return 1e-12 * (1.0 + abs(v)) if np.isfinite(v) else 0.0

        def dfs(cur, start, budget):
            if budget == 0 or start >= self.n:
                return
            lb = self.bound(cur, start, budget)
            if lb >= best[0] - tol(best[0]):
                return
            comp = self.exact_completion(cur, start, budget)
            if comp is not None:
                best[0] = min(best[0], lb)
                return
            for i in range(start, self.n):
                nxt = np.minimum(cur, self.cost[i])
                total = float(nxt.sum())
                if total < best[0]:
                    best[0] = total
                dfs(nxt, i + 1, budget - 1)

        dfs(np.full(self.m, np.inf), 0, self.K)
        return best[0]

    # pass 2: lexicographically first selection within a threshold ---------
    def first_within(self, theta: float) -> list[int] | None:
        def dfs(sel, cur, arg, start, budget):
            for i in range(start, self.n):
                row = self.cost[i]
                better = row < cur
                if not better.any():
                    # row i would serve nothing; its subtree equals skipping it
                    continue
                nxt = np.where(better, row, cur)
                narg = np.where(better, i, arg)
                members = sel + [i]
                total = float(nxt.sum())
                if total <= theta and np.isin(members, narg).all():
                    return members
                if budget - 1 > 0 and i + 1 < self.n:
                    if self.bound(nxt, i + 1, budget - 1) <= theta:
                        found = dfs(members, nxt, narg, i + 1, budget - 1)
                        if found is not None:
                            return found
            return None

        cur0 = np.full(self.m, np.inf)
        if self.bound(cur0, 0, self.K) > theta:
            return None
        found = dfs([], cur0, np.full(self.m, -1), 0, self.K)
        return None if found is None else [int(self.rows[i]) for i in found]

    def solve(self, seed_rows: Sequence[int] = (), eps: float = EPS_VAL) -> list[int] | None:
        pos = {int(r): k for k, r in enumerate(self.rows)}
        seed = [pos[r] for r in seed_rows if r in pos]
        opt = self.optimum(seed)
        if not np.isfinite(opt):
            return None
        return self.first_within(opt + eps)


# ---------------------------------------------------------------------------
# MIP (Pareto / average)


def solve_assignment_pareto_avg(values: ValueMatrix, K: int, w_star: float) -> AssignmentResult:
    """Among selections with worst case <= w_star + EPS_VAL, the one with least total value."""
    if K < 1:
        raise ValueError("K must be >= 1")
    masked = values.masked()
    _check_assignable(masked, values.scenario_ids)
    allowed = np.where(masked <= w_star + EPS_VAL, masked, np.inf)
    if not np.isfinite(allowed).any(axis=0).all() or _threshold_cover(allowed, np.inf, K) is None:
        raise InfeasibleThresholdError(f"no selection of {K} plans reaches worst case {w_star!r}")
    seed = _threshold_cover(allowed, np.inf, K)
    rows = _PMedian(allowed, K).solve(seed_rows=seed)
    if rows is None:
        raise InfeasibleThresholdError(f"no selection of {K} plans reaches worst case {w_star!r}")
    return _result(values, masked, rows)


# ---------------------------------------------------------------------------
# K-medoids


def build_distance_matrix(instance: Instance) -> DistanceMatrix:
    mats = [s.dose_matrix for s in instance.scenarios]
    shape = mats[0].shape
    for s, m in zip(instance.scenarios, mats):
        if m.shape != shape:
            raise DimensionMismatchError(f"scenario {s.id} has shape {m.shape}, expected {shape}")
    T = len(mats)
    L = np.zeros((T, T))
    for a, b in itertools.combinations(range(T), 2):
        diff = (mats[a] - mats[b]).tocsr()
        L[a, b] = L[b, a] = float(np.sqrt(np.sum(diff.data**2)))
    return DistanceMatrix(L)


def solve_k_medoids(dist: DistanceMatrix, K: int) -> KMedoidsResult:
    """Exact K-medoids; ties go to the lexicographically smallest medoid set."""
    if K < 1:
        raise ValueError("K must be >= 1")
    L = dist.values
    rows = _PMedian(L, min(K, dist.size)).solve()
    assert rows is not None
    arow = _assign_rows(L, rows)
    cost = float(L[arow, np.arange(dist.size)].sum())
    return KMedoidsResult(tuple(sorted(rows)), tuple(int(r) for r in arow), cost)


def assign_fixed_selection(values: ValueMatrix, selected: Sequence[int]) -> AssignmentResult:
    """Each scenario takes its best feasible plan among ``selected``."""
    masked = values.masked()
    pos = {pid: r for r, pid in enumerate(values.plan_ids)}
    rows = [pos[p] for p in selected]
    sub = masked[rows]
    _check_assignable(sub, values.scenario_ids)
    res = _result(values, masked, rows)
    used = sorted(set(res.assignment))
    return AssignmentResult(tuple(used), res.assignment, res.worst_case, res.avg_sum, res.partition)
