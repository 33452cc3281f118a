"""Robust plan optimization over a scenario cluster.

The min-max problem is written in epigraph form and solved with the HiGHS
dual simplex through :func:`scipy.optimize.linprog`::

    minimize t
    s.t.  t >= objective(D^s x)         s in cluster
          constraints on D^s x           s in cluster
          x >= 0

Every returned solution carries a certificate: constraint slacks, the dual
bound recovered from the solver's marginals, and the resulting gap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import (
    EPS_FEAS,
    ConstraintKind,
    Instance,
    InstanceError,
    KAdaptError,
    ObjectiveKind,
)

# relative optimality gap required of every returned solution
EPS_OPT = 1e-6
_HIGHS_TOL = 1e-10


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


class LpInternalError(KAdaptError, RuntimeError):
    """The solver reported a status that the problem class rules out."""


class LpNumericalFailure(KAdaptError, RuntimeError):
    def __init__(self, message: str, log: str = ""):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class RobustSubproblem:
    instance: Instance
    cluster: tuple[int, ...]
    include_nominal: bool | None = None

    def __post_init__(self):
        cluster = tuple(sorted({int(s) for s in self.cluster}))
        if not cluster:
            raise ValueError("cluster must be nonempty")
        T = self.instance.n_scenarios
        bad = [s for s in cluster if not 0 <= s < T]
        if bad:
            raise ValueError(f"cluster has invalid scenario ids {bad}")
        object.__setattr__(self, "cluster", cluster)
        if self.include_nominal is None:
            object.__setattr__(self, "include_nominal", self.instance.nominal_id is not None)

    @property
    def scenario_set(self) -> tuple[int, ...]:
        ids = set(self.cluster)
        if self.include_nominal and self.instance.nominal_id is not None:
            ids.add(self.instance.nominal_id)
        return tuple(sorted(ids))


@dataclass(frozen=True)
class Certificate:
    slacks: np.ndarray
    max_violation: float
    primal_objective: float
    dual_objective: float
    gap: float
    dual_residual: float


@dataclass(frozen=True)
class LpSolution:
    weights: np.ndarray
    value: float
    status: LpStatus
    certificate: Certificate | None = None
    log: str = ""


@dataclass(frozen=True)
class _LpData:
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    bounds: list[tuple[float | None, float | None]]
    row_names: list[str]


def _assemble(sub: RobustSubproblem) -> _LpData:
    inst = sub.instance
    n = inst.n_beamlets
    blocks, rhs, names = [], [], []

    def add(rows: sp.spmatrix, t_coef: float, b: float, name: str):
        rows = sp.csr_matrix(rows)
        keep = np.diff(rows.indptr) > 0 if t_coef == 0 else np.ones(rows.shape[0], bool)
        rows = rows[keep]
        if rows.shape[0] == 0:
            return
        tcol = sp.csr_matrix(np.full((rows.shape[0], 1), t_coef))
        blocks.append(sp.hstack([rows, tcol], format="csr"))
        rhs.append(np.full(rows.shape[0], b))
        names.extend(f"{name}_{k}" for k in range(rows.shape[0]))

    obj_idx = inst.structures[inst.objective.structure]
    for s in sub.scenario_set:
        D = inst.scenarios[s].dose_matrix
        obj_rows = D[obj_idx]
        if inst.objective.kind is ObjectiveKind.MIN_DOSE_IN_TARGET:
            # t >= -d_i  <=>  -d_i - t <= 0
            add(-obj_rows, -1.0, 0.0, f"obj_s{s}")
        else:
            add(sp.csr_matrix(obj_rows.sum(axis=0)), -1.0, 0.0, f"obj_s{s}")
        for k, con in enumerate(inst.constraints):
            rows = D[inst.structures[con.structure]]
            if con.kind is ConstraintKind.MAX_DOSE:
                add(rows, 0.0, con.bound, f"g{k}_s{s}")
            elif con.kind is ConstraintKind.MEAN_DOSE:
                add(sp.csr_matrix(rows.mean(axis=0)), 0.0, con.bound, f"g{k}_s{s}")
            else:
                add(-sp.csr_matrix(rows), 0.0, -con.bound, f"g{k}_s{s}")
                # an all-zero underdose row can never be met
                if any(np.diff(sp.csr_matrix(rows).indptr) == 0):
                    raise InstanceError(f"constraint {k} on scenario {s} has a voxel with no dose")

    A = sp.vstack(blocks, format="csr")
    b = np.concatenate(rhs)
    touched = np.zeros(n + 1, dtype=bool)
    touched[np.unique(A.indices)] = True
    bounds: list[tuple[float | None, float | None]] = [
        (0.0, None) if touched[j] else (0.0, 0.0) for j in range(n)
    ]
    bounds.append((None, None))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    return _LpData(A, b, c, bounds, names)


def _certificate(data: _LpData, res) -> Certificate:
    x = res.x
    slacks = data.b - data.A @ x
    scale = np.maximum(np.abs(data.b), 1.0)
    max_violation = float(max(0.0, np.max(-slacks / scale)))
    y = res.ineqlin.marginals
    zl = res.lower.marginals
    zu = res.upper.marginals
    lb = np.array([lo if lo is not None else 0.0 for lo, _ in data.bounds])
    ub = np.array([hi if hi is not None else 0.0 for _, hi in data.bounds])
    dual = float(data.b @ y + lb @ zl + ub @ zu)
    primal = float(data.c @ x)
    residual = data.c - data.A.T @ y - zl - zu
    gap = abs(primal - dual) / max(1.0, abs(primal))
    return Certificate(slacks, max_violation, primal, dual, gap, float(np.max(np.abs(residual))))


def solve_robust_subproblem(sub: RobustSubproblem) -> LpSolution:
    inst = sub.instance
    data = _assemble(sub)
    res = linprog(
        data.c,
        A_ub=data.A,
        b_ub=data.b,
        bounds=data.bounds,
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": _HIGHS_TOL,
            "dual_feasibility_tolerance": _HIGHS_TOL,
        },
    )
    log = f"status={res.status} message={res.message}"
    if res.status == 2:
        if inst.overdose_only:
            raise LpInternalError(
                f"robust subproblem on cluster {sub.cluster} reported infeasible, "
                "but x = 0 is feasible for overdose-only instances"
            )
        raise LpNumericalFailure(f"cluster {sub.cluster}: problem infeasible", log)
    if res.status != 0:
        raise LpNumericalFailure(f"cluster {sub.cluster}: solver did not reach optimality", log)

    cert = _certificate(data, res)
    if cert.max_violation > EPS_FEAS:
        raise LpNumericalFailure(
            f"cluster {sub.cluster}: constraint violation {cert.max_violation:.3g} exceeds tolerance", log
        )
    if cert.gap > EPS_OPT:
        raise LpNumericalFailure(f"cluster {sub.cluster}: optimality gap {cert.gap:.3g} exceeds {EPS_OPT}", log)

    x = np.maximum(res.x[:-1], 0.0)
    for j, (lo, hi) in enumerate(data.bounds[:-1]):
        if hi == 0.0:
            x[j] = 0.0
    return LpSolution(weights=x, value=float(res.x[-1]), status=LpStatus.OPTIMAL, certificate=cert, log=log)


def solve_single_scenario(instance: Instance, scenario_id: int, include_nominal: bool = False) -> LpSolution:
    return solve_robust_subproblem(RobustSubproblem(instance, (scenario_id,), include_nominal))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp_file(sub: RobustSubproblem, path: str | Path) -> None:
    """Dump the subproblem in CPLEX LP text format for outside checking."""
    data = _assemble(sub)
    n = data.A.shape[1] - 1
    names = [f"x{j}" for j in range(n)] + ["t"]
    lines = ["\\ robust subproblem, cluster " + " ".join(map(str, sub.cluster)), "Minimize", " obj: t", "Subject To"]
    A = data.A.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        terms = " ".join(
            f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[j]}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi])
        )
        lines.append(f" {data.row_names[r]}: {terms} <= {_fmt(data.b[r])}")
    lines.append("Bounds")
    for j, (lo, hi) in enumerate(data.bounds):
        if lo is None:
            lines.append(f" {names[j]} free")
        elif hi is not None:
            lines.append(f" {_fmt(lo)} <= {names[j]} <= {_fmt(hi)}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def cluster_values(solution: LpSolution, instance: Instance, cluster: Iterable[int]) -> np.ndarray:
    return np.array([instance.objective_value(s, solution.weights) for s in cluster])
