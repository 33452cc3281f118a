"""Domain types, plan evaluation and partition handling shared by every solver.

All optimization is carried out as minimization.  For the radiotherapy-style
objective (maximize the minimum target dose) the internal value of a dose
vector ``d`` is ``-min(d[target])``; the reporting layer negates it back.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

# relative tolerance applied to every constraint bound
EPS_FEAS = 1e-7
# absolute tolerance for comparing internal objective values
EPS_VAL = 1e-9


class KAdaptError(Exception):
    """Base class for errors raised by this package."""


class InstanceError(KAdaptError, ValueError):
    pass


class DimensionMismatchError(KAdaptError, ValueError):
    pass


class PartitionError(KAdaptError, ValueError):
    pass


class ObjectiveKind(str, enum.Enum):
    MIN_DOSE_IN_TARGET = "min_dose_in_target"
    # sum of the dose over a structure; used by the hitting-set reduction
    SUM_DOSE = "sum_dose"


class ConstraintKind(str, enum.Enum):
    MAX_DOSE = "max_dose"
    MEAN_DOSE = "mean_dose"
    # underdose constraint; only the hitting-set family may use it
    MIN_DOSE = "min_dose"

    @property
    def is_overdose(self) -> bool:
        return self is not ConstraintKind.MIN_DOSE


class PhaseTag(str, enum.Enum):
    INIT = "init"
    GENERATED = "generated"
    FALLBACK = "fallback"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ObjectiveSpec:
    structure: str
    kind: ObjectiveKind = ObjectiveKind.MIN_DOSE_IN_TARGET

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))


@dataclass(frozen=True)
class ConstraintSpec:
    structure: str
    kind: ConstraintKind
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        object.__setattr__(self, "bound", float(self.bound))
        if not self.bound > 0:
            raise InstanceError(f"constraint on {self.structure!r}: bound must be > 0, got {self.bound}")

    def statistic(self, dose: np.ndarray) -> float:
        if self.kind is ConstraintKind.MAX_DOSE:
            return float(dose.max())
        if self.kind is ConstraintKind.MEAN_DOSE:
            return float(dose.mean())
        return float(dose.min())

    def satisfied(self, stat: float) -> bool:
        slack = EPS_FEAS * abs(self.bound)
        if self.kind.is_overdose:
            return stat <= self.bound + slack
        return stat >= self.bound - slack


@dataclass(frozen=True, eq=False)
class Scenario:
    id: int
    dose_matrix: sp.csr_matrix
    label: str = ""

    def __post_init__(self):
        mat = sp.csr_matrix(self.dose_matrix, dtype=np.float64)
        mat.sum_duplicates()
        mat.sort_indices()
        if mat.nnz and mat.data.min() < 0:
            raise InstanceError(f"scenario {self.id}: dose matrix has negative entries")
        object.__setattr__(self, "dose_matrix", mat)

    @property
    def shape(self) -> tuple[int, int]:
        return self.dose_matrix.shape

    def dose(self, weights: np.ndarray) -> np.ndarray:
        return self.dose_matrix @ weights


@dataclass(frozen=True, eq=False)
class Instance:
    """An uncertainty set of dose matrices with the planning problem on top."""

    scenarios: tuple[Scenario, ...]
    structures: Mapping[str, np.ndarray]
    objective: ObjectiveSpec
    constraints: tuple[ConstraintSpec, ...] = ()
    nominal_id: int | None = None
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(
            self,
            "structures",
            {name: np.asarray(idx, dtype=np.int64) for name, idx in self.structures.items()},
        )
        object.__setattr__(self, "metadata", dict(self.metadata))
        self._validate()

    def _validate(self):
        if not self.scenarios:
            raise InstanceError("instance needs at least one scenario")
        shape = self.scenarios[0].shape
        for pos, scn in enumerate(self.scenarios):
            if scn.id != pos:
                raise InstanceError(f"scenario ids must be 0..T-1 without gaps; position {pos} has id {scn.id}")
            if scn.shape != shape:
                raise InstanceError(f"scenario {scn.id} has shape {scn.shape}, expected {shape}")
        n_vox = shape[0]
        for name, idx in self.structures.items():
            if idx.size == 0:
                raise InstanceError(f"structure {name!r} is empty")
            if idx.min() < 0 or idx.max() >= n_vox:
                raise InstanceError(f"structure {name!r} has voxel indices outside 0..{n_vox - 1}")
        if self.objective.structure not in self.structures:
            raise InstanceError(f"objective structure {self.objective.structure!r} not defined")
        for con in self.constraints:
            if con.structure not in self.structures:
                raise InstanceError(f"constraint structure {con.structure!r} not defined")
            if not con.kind.is_overdose and not self.allows_underdose:
                raise InstanceError(
                    "underdose constraints are only allowed for the hitting-set family"
                )
        if self.nominal_id is not None and not 0 <= self.nominal_id < len(self.scenarios):
            raise InstanceError(f"nominal_id {self.nominal_id} is not a scenario id")

    @property
    def allows_underdose(self) -> bool:
        return self.metadata.get("family") == "hitting_set"

    @property
    def overdose_only(self) -> bool:
        return all(con.kind.is_overdose for con in self.constraints)

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def n_voxels(self) -> int:
        return self.scenarios[0].shape[0]

    @property
    def n_beamlets(self) -> int:
        return self.scenarios[0].shape[1]

    @cached_property
    def _blocks(self) -> list[tuple[sp.csr_matrix, list[sp.csr_matrix]]]:
        # per scenario: objective rows, then rows of each constraint structure
        out = []
        obj_idx = self.structures[self.objective.structure]
        for scn in self.scenarios:
            mat = scn.dose_matrix
            cons = [mat[self.structures[c.structure]] for c in self.constraints]
            out.append((mat[obj_idx], cons))
        return out

    def objective_value(self, scenario_id: int, weights: np.ndarray) -> float:
        obj_rows, _ = self._blocks[scenario_id]
        dose = obj_rows @ weights
        if self.objective.kind is ObjectiveKind.MIN_DOSE_IN_TARGET:
            return -float(dose.min())
        return float(dose.sum())

    def feasibility(self, scenario_id: int, weights: np.ndarray) -> bool:
        _, cons_rows = self._blocks[scenario_id]
        return all(
            con.satisfied(con.statistic(rows @ weights))
            for con, rows in zip(self.constraints, cons_rows)
        )


@dataclass(frozen=True, eq=False)
class PlanSolution:
    id: int
    weights: np.ndarray
    origin: tuple[int, ...] = ()
    phase_tag: PhaseTag = PhaseTag.EXTERNAL
    generated_at_k: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("plan weights must be a vector")
        if w.size and w.min() < 0:
            raise ValueError(f"plan {self.id}: weights must be nonnegative")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "origin", tuple(sorted(int(s) for s in self.origin)))
        object.__setattr__(self, "phase_tag", PhaseTag(self.phase_tag))


def evaluate_plan(plan: PlanSolution, scenario: Scenario, instance: Instance) -> tuple[float, bool]:
    """Objective value and feasibility of ``plan`` on ``scenario``.

    The value is reported even when the plan is infeasible there.
    """
    if plan.weights.shape[0] != scenario.shape[1]:
        raise DimensionMismatchError(
            f"plan {plan.id} has {plan.weights.shape[0]} weights but scenario "
            f"{scenario.id} has {scenario.shape[1]} beamlets"
        )
    return (
        instance.objective_value(scenario.id, plan.weights),
        instance.feasibility(scenario.id, plan.weights),
    )


@dataclass(frozen=True, eq=False)
class ValueMatrix:
    """Plan-on-scenario objective values with a feasibility mask.

    Rows follow ``plan_ids``, which is strictly increasing.
    """

    values: np.ndarray
    feasible: np.ndarray
    plan_ids: tuple[int, ...]
    scenario_ids: tuple[int, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        feasible = np.array(self.feasible, dtype=bool, ndmin=2)
        if values.shape != feasible.shape:
            raise ValueError("values and feasibility mask differ in shape")
        plan_ids = tuple(int(i) for i in self.plan_ids)
        scenario_ids = tuple(int(j) for j in self.scenario_ids)
        if values.shape != (len(plan_ids), len(scenario_ids)):
            raise ValueError(
                f"matrix shape {values.shape} does not match {len(plan_ids)} plans x {len(scenario_ids)} scenarios"
            )
        if any(a >= b for a, b in zip(plan_ids, plan_ids[1:])):
            raise ValueError("plan ids must be strictly increasing")
        if not np.all(np.isfinite(values[feasible])):
            raise ValueError("feasible cells must hold finite values")
        values.setflags(write=False)
        feasible.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feasible", feasible)
        object.__setattr__(self, "plan_ids", plan_ids)
        object.__setattr__(self, "scenario_ids", scenario_ids)

    @classmethod
    def from_array(cls, values, feasible=None) -> "ValueMatrix":
        """Convenience constructor; ``inf``/``nan`` cells count as infeasible."""
        values = np.array(values, dtype=np.float64, ndmin=2)
        if feasible is None:
            feasible = np.isfinite(values)
        values = np.where(np.isfinite(values), values, 0.0)
        n, m = values.shape
        return cls(values, feasible, tuple(range(n)), tuple(range(m)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def masked(self) -> np.ndarray:
        """Values with infeasible cells set to ``+inf``."""
        return np.where(self.feasible, self.values, np.inf)

    def rows(self, plan_ids: Iterable[int]) -> "ValueMatrix":
        pos = {pid: r for r, pid in enumerate(self.plan_ids)}
        ids = sorted(set(int(p) for p in plan_ids))
        idx = [pos[p] for p in ids]
        return ValueMatrix(self.values[idx], self.feasible[idx], tuple(ids), self.scenario_ids)


def _evaluate_rows(pool: Sequence[PlanSolution], instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    values = np.empty((len(pool), instance.n_scenarios))
    feasible = np.empty((len(pool), instance.n_scenarios), dtype=bool)
    for r, plan in enumerate(pool):
        for scn in instance.scenarios:
            values[r, scn.id], feasible[r, scn.id] = evaluate_plan(plan, scn, instance)
    return values, feasible


def build_value_matrix(pool: Sequence[PlanSolution], instance: Instance) -> ValueMatrix:
    if not pool:
        raise ValueError("plan pool is empty")
    pool = sorted(pool, key=lambda p: p.id)
    values, feasible = _evaluate_rows(pool, instance)
    return ValueMatrix(
        values, feasible, tuple(p.id for p in pool), tuple(range(instance.n_scenarios))
    )


def extend_value_matrix(vm: ValueMatrix, new_plans: Sequence[PlanSolution], instance: Instance) -> ValueMatrix:
    """Append rows for ``new_plans``; existing rows are copied untouched."""
    if not new_plans:
        return vm
    new_plans = sorted(new_plans, key=lambda p: p.id)
    if vm.plan_ids and new_plans[0].id <= vm.plan_ids[-1]:
        raise ValueError("new plans must have ids above the existing ones")
    values, feasible = _evaluate_rows(new_plans, instance)
    return ValueMatrix(
        np.vstack([vm.values, values]),
        np.vstack([vm.feasible, feasible]),
        vm.plan_ids + tuple(p.id for p in new_plans),
        vm.scenario_ids,
    )


Partition = tuple[tuple[int, ...], ...]


def canonicalize_partition(partition: Iterable[Iterable[int]], scenario_ids: Iterable[int] | None = None) -> Partition:
    """Sorted blocks in lexicographic order; independent of block order.

    ``scenario_ids`` is the universe that the blocks must cover exactly; by
    default it is ``0..N-1`` with ``N`` the total number of elements.
    """
    blocks = [tuple(sorted(int(s) for s in block)) for block in partition]
    if any(not b for b in blocks):
        raise PartitionError("partition contains an empty block")
    flat = [s for b in blocks for s in b]
    if len(flat) != len(set(flat)):
        raise PartitionError("partition blocks overlap")
    universe = set(range(len(flat))) if scenario_ids is None else {int(s) for s in scenario_ids}
    if set(flat) != universe:
        missing = sorted(universe - set(flat))
        extra = sorted(set(flat) - universe)
        raise PartitionError(f"partition does not cover the scenario set (missing {missing}, unexpected {extra})")
    return tuple(sorted(blocks))
