import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from builders import dense_instance, single_cell, small_phantom
from kadapt import (
    ConstraintKind,
    ConstraintSpec,
    DimensionMismatchError,
    HittingSetSpec,
    Instance,
    InstanceError,
    ObjectiveSpec,
    PartitionError,
    PlanSolution,
    Scenario,
    ValueMatrix,
    build_value_matrix,
    canonicalize_partition,
    evaluate_plan,
    extend_value_matrix,
    generate_hitting_set_instance,
)
from kadapt.instgen import proof_plans


def plan(w, pid=0):
    return PlanSolution(pid, np.asarray(w, float))


# evaluate_plan ---------------------------------------------------------------


def test_zero_plan_value_zero_and_feasible():
    inst = small_phantom()
    for scn in inst.scenarios:
        assert evaluate_plan(plan(np.zeros(inst.n_beamlets)), scn, inst) == (0.0, True)


def test_single_cell_feasible():
    inst = single_cell([2.0])
    assert evaluate_plan(plan([5.0]), inst.scenarios[0], inst) == (-10.0, True)


def test_single_cell_overdose_reported_but_infeasible():
    inst = single_cell([2.0])
    assert evaluate_plan(plan([6.0]), inst.scenarios[0], inst) == (-12.0, False)


def test_feasibility_tolerance_is_relative():
    inst = single_cell([1.0], bound=1000.0)
    assert evaluate_plan(plan([1000.0 * (1 + 5e-8)]), inst.scenarios[0], inst)[1]
    assert not evaluate_plan(plan([1000.0 * (1 + 5e-7)]), inst.scenarios[0], inst)[1]


def test_mean_dose_constraint():
    inst = dense_instance(
        [[[1.0], [3.0]]],
        {"target": [0], "oar": [0, 1]},
        [ConstraintSpec("oar", ConstraintKind.MEAN_DOSE, 4.0)],
    )
    assert evaluate_plan(plan([2.0]), inst.scenarios[0], inst) == (-2.0, True)
    assert evaluate_plan(plan([2.1]), inst.scenarios[0], inst)[1] is False


def test_dimension_mismatch_names_plan_and_scenario():
    inst = single_cell([2.0])
    with pytest.raises(DimensionMismatchError, match="plan 7.*scenario 0"):
        evaluate_plan(plan([1.0, 2.0], pid=7), inst.scenarios[0], inst)


def test_plan_weights_nonnegative():
    with pytest.raises(ValueError):
        plan([-1.0])


# instance validation ---------------------------------------------------------


def test_instance_rejects_gapped_ids():
    scn = (Scenario(1, sp.csr_matrix([[1.0]])),)
    with pytest.raises(InstanceError, match="0..T-1"):
        Instance(scn, {"target": [0]}, ObjectiveSpec("target"))


def test_instance_rejects_shape_mismatch():
    with pytest.raises(InstanceError, match="shape"):
        dense_instance([[[1.0]], [[1.0, 2.0]]], {"target": [0]}, [])


def test_instance_rejects_bad_structure():
    with pytest.raises(InstanceError, match="outside"):
        dense_instance([[[1.0]]], {"target": [3]}, [])
    with pytest.raises(InstanceError, match="empty"):
        dense_instance([[[1.0]]], {"target": []}, [])


def test_instance_rejects_underdose_outside_hitting_set():
    with pytest.raises(InstanceError, match="underdose"):
        dense_instance([[[1.0]]], {"target": [0]}, [ConstraintSpec("target", ConstraintKind.MIN_DOSE, 1.0)])


def test_instance_rejects_bad_nominal():
    with pytest.raises(InstanceError, match="nominal"):
        dense_instance([[[1.0]]], {"target": [0]}, [], nominal_id=3)


def test_constraint_bound_positive():
    with pytest.raises(InstanceError):
        ConstraintSpec("t", ConstraintKind.MAX_DOSE, 0.0)


# value matrix -----------------------------------------------------------------


def test_value_matrix_one_by_one():
    inst = single_cell([2.0])
    p = plan([3.0])
    vm = build_value_matrix([p], inst)
    assert vm.shape == (1, 1)
    assert (vm.values[0, 0], bool(vm.feasible[0, 0])) == evaluate_plan(p, inst.scenarios[0], inst)


def test_value_matrix_hitting_set_proof_plans_diagonal_zero():
    spec = HittingSetSpec(3, (frozenset({1}), frozenset({2}), frozenset({3})))
    inst = generate_hitting_set_instance(spec)
    # item l+1 belongs to set l, so the unit plan for that item costs nothing there
    pool = [PlanSolution(i, w) for i, w in enumerate(proof_plans(spec))]
    vm = build_value_matrix(pool, inst)
    assert np.all(np.diag(vm.values) == 0.0)
    assert vm.feasible.all()


def test_extend_value_matrix_keeps_prior_rows_bit_identical():
    inst = small_phantom()
    rng = np.random.default_rng(3)
    pool = [PlanSolution(i, rng.uniform(0, 1, inst.n_beamlets)) for i in range(3)]
    vm = build_value_matrix(pool, inst)
    ext = extend_value_matrix(vm, [PlanSolution(3, rng.uniform(0, 1, inst.n_beamlets))], inst)
    assert ext.values[:3].tobytes() == vm.values.tobytes()
    assert ext.feasible[:3].tobytes() == vm.feasible.tobytes()
    again = build_value_matrix(pool, inst)
    assert again.values.tobytes() == vm.values.tobytes()


def test_value_matrix_validation():
    with pytest.raises(ValueError, match="increasing"):
        ValueMatrix(np.zeros((2, 1)), np.ones((2, 1), bool), (1, 0), (0,))
    with pytest.raises(ValueError, match="shape"):
        ValueMatrix(np.zeros((2, 1)), np.ones((2, 1), bool), (0,), (0,))


def test_value_matrix_masked_and_from_array():
    vm = ValueMatrix.from_array([[1.0, np.inf], [2.0, 3.0]])
    assert vm.feasible.tolist() == [[True, False], [True, True]]
    assert np.isinf(vm.masked()[0, 1])


def test_generated_plan_feasible_on_its_cluster():
    from kadapt import PlanPool

    inst = small_phantom()
    pool = PlanPool(inst)
    pid, _ = pool.robust_plan((2, 5, 7))
    vm = pool.matrix()
    assert vm.feasible[pid, list(pool.solve_set((2, 5, 7)))].all()


# partitions ------------------------------------------------------------------


def test_canonicalize_examples():
    assert canonicalize_partition([{2, 0}, {1}]) == ((0, 2), (1,))
    assert canonicalize_partition([{1}, {0, 2}]) == ((0, 2), (1,))
    assert canonicalize_partition([{0}, {1}, {2}, {3}]) == ((0,), (1,), (2,), (3,))


def test_canonicalize_errors():
    with pytest.raises(PartitionError, match="overlap"):
        canonicalize_partition([{0, 1}, {1, 2}])
    with pytest.raises(PartitionError, match="cover"):
        canonicalize_partition([{0}, {2}])
    with pytest.raises(PartitionError, match="empty"):
        canonicalize_partition([{0}, set()])
    with pytest.raises(PartitionError, match="cover"):
        canonicalize_partition([{0}, {1}], scenario_ids=range(3))


@given(st.integers(1, 9).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, 3), min_size=n, max_size=n), st.randoms())
))
def test_canonicalize_shuffle_invariant(args):
    n, labels, rnd = args
    blocks = {}
    for s, lab in enumerate(labels):
        blocks.setdefault(lab, []).append(s)
    parts = [list(b) for b in blocks.values()]
    key = canonicalize_partition(parts)
    for b in parts:
        rnd.shuffle(b)
    rnd.shuffle(parts)
    assert canonicalize_partition(parts) == key
    assert hash(key) == hash(canonicalize_partition(parts))


@given(st.lists(st.floats(0, 5), min_size=3, max_size=3), st.integers(0, 2))
def test_evaluation_is_finite_and_pure(w, sid):
    inst = small_phantom()
    w = np.array(w + [0.0] * (inst.n_beamlets - 3))
    a = evaluate_plan(plan(w), inst.scenarios[sid], inst)
    b = evaluate_plan(plan(w), inst.scenarios[sid], inst)
    assert np.isfinite(a[0]) and a == b
