"""The K-adaptability clustering heuristic, its two variants and a K-medoids baseline.

A run has two phases.  Generation: starting from one optimal plan per
scenario, for each K the pool is repeatedly assigned to scenarios (worst case
first, then the best total among worst-case optimal assignments); every
resulting scenario cluster gets a robust plan, and the loop stops once a
partition shows up again.  Redistribution: the assignment is redone for every
K over everything generated.

``run_main`` walks K downwards with one global pool, ``run_lsp`` resets the
working pool to the initial plans for each K, and ``run_aosg`` walks K upwards.
"""

from __future__ import annotations

import enum
import itertools
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .assign import (
    AssignmentResult,
    UnassignableScenarioError,
    assign_fixed_selection,
    build_distance_matrix,
    solve_assignment_pareto_avg,
    solve_assignment_worst_case,
    solve_k_medoids,
)
from .core import (
    Instance,
    KAdaptError,
    ObjectiveKind,
    Partition,
    PhaseTag,
    PlanSolution,
    ValueMatrix,
    evaluate_plan,
)
from .lp import RobustSubproblem, solve_robust_subproblem

DEFAULT_ITERATION_CAP = 1000


class TerminationGuardError(KAdaptError, RuntimeError):
    pass


class Method(str, enum.Enum):
    MAIN = "main"
    LSP = "lsp"
    AOSG = "aosg"
    KMEDOIDS = "kmedoids"


class Order(str, enum.Enum):
    DESCENDING = "descending"
    ASCENDING = "ascending"


class PoolMode(str, enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class IterationTrace:
    K: int
    iteration: int
    w: float
    partition: Partition
    worst_cluster_size: int
    new_plans: int
    solver_calls: int  # cumulative over the run


@dataclass(frozen=True)
class KRecord:
    K: int
    best_plans: tuple[int, ...]
    w_star: float
    assignment: tuple[int, ...] = ()
    partition: Partition = ()
    generation_trace: tuple[IterationTrace, ...] = ()
    solver_calls: int = 0
    # size of the cluster holding the worst-served scenario in the final assignment
    worst_cluster_size: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def generation_w(self) -> float | None:
        return self.generation_trace[-1].w if self.generation_trace else None


@dataclass(frozen=True)
class HeuristicRun:
    method: Method
    records: tuple[KRecord, ...]
    pool: tuple[PlanSolution, ...]
    partition_history: dict[int, tuple[Partition, ...]]
    objective_kind: ObjectiveKind
    solver_calls: int
    wall_time: float = field(default=0.0, compare=False)

    def record(self, K: int) -> KRecord:
        return self.records[K - 1]

    @property
    def w_star(self) -> np.ndarray:
        return np.array([r.w_star for r in self.records])

    def same_as(self, other: "HeuristicRun") -> bool:
        """Equality of everything except timings, with plan weights compared bitwise."""
        return (
            self.method == other.method
            and self.records == other.records
            and self.partition_history == other.partition_history
            and self.solver_calls == other.solver_calls
            and len(self.pool) == len(other.pool)
            and all(
                a.id == b.id and a.origin == b.origin and a.phase_tag == b.phase_tag
                and a.weights.tobytes() == b.weights.tobytes()
                for a, b in zip(self.pool, other.pool)
            )
        )


# ---------------------------------------------------------------------------
# pool with incremental value matrix and a memoized robust solver


class PlanPool:
    """All plans of a run, their values on every scenario, and the solve cache.

    Plans are never removed; ids are positions in the pool.  A cluster of two
    or more scenarios is solved together with the nominal scenario when
    ``include_nominal`` is set; a single scenario is solved on its own, which
    makes singleton plans the per-scenario optima.  The cache is keyed by the
    scenario set handed to the solver and ``solver_calls`` counts real solves.
    """

    def __init__(self, instance: Instance, include_nominal: bool | None = None):
        self.instance = instance
        if include_nominal is None:
            include_nominal = instance.nominal_id is not None
        self.include_nominal = bool(include_nominal) and instance.nominal_id is not None
        self.plans: list[PlanSolution] = []
        self._values: list[np.ndarray] = []
        self._feasible: list[np.ndarray] = []
        self._cache: dict[tuple[int, ...], int] = {}
        self.solver_calls = 0

    def __len__(self):
        return len(self.plans)

    def add(self, weights, origin=(), phase_tag=PhaseTag.EXTERNAL, generated_at_k=None) -> int:
        plan = PlanSolution(len(self.plans), weights, origin, phase_tag, generated_at_k)
        vals, feas = zip(*(evaluate_plan(plan, s, self.instance) for s in self.instance.scenarios))
        self.plans.append(plan)
        self._values.append(np.array(vals))
        self._feasible.append(np.array(feas, dtype=bool))
        return plan.id

    def solve_set(self, cluster: Iterable[int]) -> tuple[int, ...]:
        ids = set(int(s) for s in cluster)
        if len(ids) > 1 and self.include_nominal:
            ids.add(self.instance.nominal_id)
        return tuple(sorted(ids))

    def robust_plan(self, cluster: Iterable[int], phase_tag=PhaseTag.GENERATED, K=None) -> tuple[int, bool]:
        """Plan id for ``cluster`` and whether a new solve was needed."""
        cluster = tuple(sorted(set(int(s) for s in cluster)))
        key = self.solve_set(cluster)
        if key in self._cache:
            return self._cache[key], False
        sol = solve_robust_subproblem(RobustSubproblem(self.instance, key, include_nominal=False))
        self.solver_calls += 1
        pid = self.add(sol.weights, cluster, phase_tag, K)
        self._cache[key] = pid
        return pid, True

    def matrix(self, plan_ids: Iterable[int] | None = None) -> ValueMatrix:
        ids = range(len(self.plans)) if plan_ids is None else sorted(set(plan_ids))
        ids = list(ids)
        return ValueMatrix(
            np.array([self._values[i] for i in ids]),
            np.array([self._feasible[i] for i in ids]),
            tuple(ids),
            tuple(range(self.instance.n_scenarios)),
        )


def _init_pool(instance: Instance, include_nominal: bool | None) -> tuple[PlanPool, list[int]]:
    pool = PlanPool(instance, include_nominal)
    init = [pool.robust_plan((s,), PhaseTag.INIT)[0] for s in range(instance.n_scenarios)]
    return pool, init


def _fallback(pool: PlanPool, init: list[int]) -> int | None:
    """Add x = 0 to the pool (once) and to the initial plans.

    On an overdose-only instance the zero plan is feasible everywhere, so it
    keeps a budget of K plans assignable before any plan covering many
    scenarios exists.  Returns None when it is not available or already there.
    """
    if not pool.instance.overdose_only or any(pool.plans[i].phase_tag is PhaseTag.FALLBACK for i in init):
        return None
    pid = pool.add(np.zeros(pool.instance.n_beamlets), (), PhaseTag.FALLBACK)
    init.append(pid)
    return pid


def _assign(vm: ValueMatrix, K: int) -> tuple[AssignmentResult, AssignmentResult]:
    worst = solve_assignment_worst_case(vm, K)
    pareto = solve_assignment_pareto_avg(vm, K, worst.worst_case)
    return worst, pareto


def _worst_cluster_size(res: AssignmentResult, vm: ValueMatrix) -> int:
    pos = {pid: r for r, pid in enumerate(vm.plan_ids)}
    served = np.array([vm.values[pos[p], j] for j, p in enumerate(res.assignment)])
    j_worst = int(np.argmax(served))
    return next(len(b) for b in res.partition if j_worst in b)


# ---------------------------------------------------------------------------
# phases


@dataclass
class GenerationResult:
    pool: PlanPool
    init_ids: list[int]
    traces: dict[int, list[IterationTrace]]
    partition_history: dict[int, list[Partition]]
    solver_calls: dict[int, int]
    wall_time: dict[int, float]


def run_generation_phase(
    instance: Instance,
    order: Order = Order.DESCENDING,
    pool_mode: PoolMode = PoolMode.GLOBAL,
    *,
    include_nominal: bool | None = None,
    max_iterations: int = DEFAULT_ITERATION_CAP,
    log: Callable[[dict], None] | None = None,
) -> GenerationResult:
    order, pool_mode = Order(order), PoolMode(pool_mode)
    t0 = time.perf_counter()
    pool, init = _init_pool(instance, include_nominal)
    T = instance.n_scenarios
    ks = range(T, 0, -1) if order is Order.DESCENDING else range(1, T + 1)
    traces, history, calls, walls = {}, {}, {}, {}
    for n, K in enumerate(ks):
        tk = t0 if n == 0 else time.perf_counter()
        # the initial per-scenario solves count toward the first K processed
        calls_before = 0 if n == 0 else pool.solver_calls
        active = set(init) if pool_mode is PoolMode.LOCAL else set(range(len(pool)))
        seen: list[Partition] = []
        trace: list[IterationTrace] = []
        for it in range(1, max_iterations + 1):
            vm = pool.matrix(active)
            try:
                worst, pareto = _assign(vm, K)
            except UnassignableScenarioError:
                fb = _fallback(pool, init)
                if fb is None:
                    raise
                active.add(fb)
                vm = pool.matrix(active)
                worst, pareto = _assign(vm, K)
            part = pareto.partition
            new = 0
            for cluster in part:
                pid, fresh = pool.robust_plan(cluster, PhaseTag.GENERATED, K)
                new += fresh
                active.add(pid)
            if pool_mode is PoolMode.GLOBAL:
                active = set(range(len(pool)))
            trace.append(
                IterationTrace(K, it, worst.worst_case, part, _worst_cluster_size(pareto, vm), new, pool.solver_calls)
            )
            if log is not None:
                log({
                    "K": K,
                    "iteration": it,
                    "w": worst.worst_case,
                    "partition": [list(b) for b in part],
                    "new_plans": new,
                    "solver_calls": pool.solver_calls,
                    "elapsed_s": time.perf_counter() - t0,
                })
            if part in seen:
                break
            seen.append(part)
        else:
            raise TerminationGuardError(f"K={K}: no repeated partition after {max_iterations} iterations")
        traces[K], history[K] = trace, seen
        calls[K] = pool.solver_calls - calls_before
        walls[K] = time.perf_counter() - tk
    return GenerationResult(pool, init, traces, history, calls, walls)


def run_redistribution_phase(pool: PlanPool, instance: Instance, plan_ids: Iterable[int] | None = None) -> list[KRecord]:
    """Best assignment for every K = 1..T over the given plans (default: whole pool)."""
    vm = pool.matrix(plan_ids)
    out = []
    for K in range(1, instance.n_scenarios + 1):
        t = time.perf_counter()
        worst, pareto = _assign(vm, K)
        out.append(
            KRecord(K, pareto.selected, worst.worst_case, pareto.assignment, pareto.partition,
                    worst_cluster_size=_worst_cluster_size(pareto, vm), wall_time=time.perf_counter() - t)
        )
    return out


def _two_phase(instance, method, order, pool_mode, **kw) -> HeuristicRun:
    t0 = time.perf_counter()
    gen = run_generation_phase(instance, order, pool_mode, **kw)
    redis = run_redistribution_phase(gen.pool, instance)
    records = tuple(
        KRecord(
            r.K, r.best_plans, r.w_star, r.assignment, r.partition,
            tuple(gen.traces[r.K]), gen.solver_calls[r.K], r.worst_cluster_size, gen.wall_time[r.K] + r.wall_time,
        )
        for r in redis
    )
    return HeuristicRun(
        Method(method),
        records,
        tuple(gen.pool.plans),
        {K: tuple(v) for K, v in sorted(gen.partition_history.items())},
        instance.objective.kind,
        gen.pool.solver_calls,
        time.perf_counter() - t0,
    )


def run_main(instance: Instance, **kw) -> HeuristicRun:
    return _two_phase(instance, Method.MAIN, Order.DESCENDING, PoolMode.GLOBAL, **kw)


def run_lsp(instance: Instance, **kw) -> HeuristicRun:
    return _two_phase(instance, Method.LSP, Order.DESCENDING, PoolMode.LOCAL, **kw)


def run_aosg(instance: Instance, **kw) -> HeuristicRun:
    return _two_phase(instance, Method.AOSG, Order.ASCENDING, PoolMode.GLOBAL, **kw)


def run_kmedoids_pipeline(
    instance: Instance,
    *,
    include_nominal: bool | None = None,
    log: Callable[[dict], None] | None = None,
    **_ignored,
) -> HeuristicRun:
    """Cluster the scenarios by dose-matrix distance and plan each cluster robustly.

    The K plans for a given K are evaluated on their own (every scenario takes
    its best feasible plan among them).  If that is worse than the set kept
    for K - 1, the K - 1 set is kept, since it also fits a budget of K plans.
    """
    t0 = time.perf_counter()
    pool = PlanPool(instance, include_nominal)
    dist = build_distance_matrix(instance)
    T = instance.n_scenarios
    records: list[KRecord] = []
    history: dict[int, tuple[Partition, ...]] = {}
    for K in range(1, T + 1):
        tk = time.perf_counter()
        calls_before = pool.solver_calls
        km = solve_k_medoids(dist, K)
        clusters = km.clusters()
        plan_ids = [pool.robust_plan(c, PhaseTag.GENERATED, K)[0] for c in clusters]
        vm = pool.matrix(plan_ids)
        res = assign_fixed_selection(vm, plan_ids)
        trace = IterationTrace(K, 1, res.worst_case, clusters, _worst_cluster_size(res, vm),
                               pool.solver_calls - calls_before, pool.solver_calls)
        if records and res.worst_case > records[-1].w_star:
            prev = records[-1]
            best, w, assignment, partition = prev.best_plans, prev.w_star, prev.assignment, prev.partition
            wcs = prev.worst_cluster_size
        else:
            best, w, assignment, partition = res.selected, res.worst_case, res.assignment, res.partition
            wcs = trace.worst_cluster_size
        history[K] = (clusters,)
        records.append(KRecord(K, best, w, assignment, partition, (trace,),
                               pool.solver_calls - calls_before, wcs, time.perf_counter() - tk))
        if log is not None:
            log({"K": K, "iteration": 1, "w": w, "partition": [list(b) for b in clusters],
                 "new_plans": trace.new_plans, "solver_calls": pool.solver_calls,
                 "elapsed_s": time.perf_counter() - t0})
    return HeuristicRun(Method.KMEDOIDS, tuple(records), tuple(pool.plans), history,
                        instance.objective.kind, pool.solver_calls, time.perf_counter() - t0)


def enriched_pool(instance: Instance, *, include_nominal: bool | None = None, extra_plans=()) -> PlanPool:
    """A pool holding the robust plan of every nonempty cluster (2^T - 1 of them).

    Only meant for tiny T; the exact min-max-min value over these plans bounds
    what any of the heuristics can reach.
    """
    T = instance.n_scenarios
    if T > 12:
        raise ValueError(f"refusing to enumerate {2 ** T - 1} clusters")
    pool = PlanPool(instance, include_nominal)
    for w in extra_plans:
        pool.add(np.asarray(w, dtype=float), (), PhaseTag.EXTERNAL)
    for size in range(1, T + 1):
        for cluster in itertools.combinations(range(T), size):
            pool.robust_plan(cluster, PhaseTag.GENERATED)
    return pool


def exact_worst_case(pool: PlanPool, K: int) -> float:
    """Exact best worst case over selections of at most K plans from ``pool``."""
    return solve_assignment_worst_case(pool.matrix(), K).worst_case


RUNNERS = {
    Method.MAIN: run_main,
    Method.LSP: run_lsp,
    Method.AOSG: run_aosg,
    Method.KMEDOIDS: run_kmedoids_pipeline,
}


def run_method(instance: Instance, method: Method | str, **kw) -> HeuristicRun:
    return RUNNERS[Method(method)](instance, **kw)


def jsonl_logger(fh) -> Callable[[dict], None]:
    def write(event: dict):
        fh.write(json.dumps(event, sort_keys=True) + "\n")

    return write
