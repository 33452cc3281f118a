import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from builders import dense_instance, small_phantom
from kadapt import (
    EPS_VAL,
    DimensionMismatchError,
    DistanceMatrix,
    InfeasibleThresholdError,
    Instance,
    ObjectiveSpec,
    Scenario,
    UnassignableScenarioError,
    ValueMatrix,
    assign_fixed_selection,
    build_distance_matrix,
    solve_assignment_pareto_avg,
    solve_assignment_worst_case,
    solve_k_medoids,
)
from kadapt.oracles import enumerate_k_medoids, enumerate_pareto, enumerate_worst_case


def vm(rows):
    return ValueMatrix.from_array(np.asarray(rows, float))


# worst case ------------------------------------------------------------------


def test_worst_case_examples():
    assert solve_assignment_worst_case(vm([[0]]), 1).worst_case == 0
    assert solve_assignment_worst_case(vm([[1, 4], [3, 2]]), 1).worst_case == 3
    res = solve_assignment_worst_case(vm([[1, 4], [3, 2]]), 1)
    assert res.selected == (1,)
    assert solve_assignment_worst_case(vm([[1, 4], [3, 2]]), 2).worst_case == 2


def test_worst_case_full_pool_is_column_bound():
    rng = np.random.default_rng(0)
    v = rng.uniform(-5, 5, (5, 7))
    assert solve_assignment_worst_case(vm(v), 9).worst_case == v.min(axis=0).max()


def test_unassignable_scenario_listed():
    m = ValueMatrix(np.zeros((2, 3)), np.array([[True, False, True], [True, False, False]]), (0, 1), (0, 1, 2))
    with pytest.raises(UnassignableScenarioError) as info:
        solve_assignment_worst_case(m, 2)
    assert info.value.scenario_ids == (1,)


def test_worst_case_respects_mask():
    # plan 0 is best on scenario 1 but infeasible there
    m = ValueMatrix(np.array([[1.0, -9.0], [2.0, 2.0]]), np.array([[True, False], [True, True]]), (0, 1), (0, 1))
    res = solve_assignment_worst_case(m, 1)
    assert res.worst_case == 2.0 and res.selected == (1,)


def test_k_below_one_rejected():
    with pytest.raises(ValueError):
        solve_assignment_worst_case(vm([[0]]), 0)


# pareto ------------------------------------------------------------------------


def test_pareto_examples():
    r = solve_assignment_pareto_avg(vm([[3, 1], [3, 3]]), 1, 3)
    assert r.selected == (0,) and r.avg_sum == 4
    r = solve_assignment_pareto_avg(vm([[1, 4], [3, 2]]), 2, 2)
    assert r.selected == (0, 1) and r.assignment == (0, 1) and r.avg_sum == 3
    assert r.partition == ((0,), (1,))
    r = solve_assignment_pareto_avg(vm([[2, 5, 1]]), 1, 5)
    assert r.selected == (0,) and r.avg_sum == 8


def test_pareto_threshold_below_optimum():
    with pytest.raises(InfeasibleThresholdError):
        solve_assignment_pareto_avg(vm([[1, 4], [3, 2]]), 1, 2.5)


def test_pareto_ties_prefer_smallest_ids():
    # rows 0 and 2 are identical, as are rows 1 and 3
    r = solve_assignment_pareto_avg(vm([[1, 5], [5, 1], [1, 5], [5, 1]]), 2, 1)
    assert r.selected == (0, 1)


def test_pareto_selection_only_holds_used_plans():
    # plan 0 is useless once plan 1 is in; the answer is (1,) rather than (0, 1)
    r = solve_assignment_pareto_avg(vm([[9, 9], [1, 1]]), 2, 1)
    assert r.selected == (1,)


def test_assignment_result_invariants():
    rng = np.random.default_rng(1)
    v = rng.uniform(0, 10, (6, 5))
    m = vm(v)
    w = solve_assignment_worst_case(m, 3).worst_case
    r = solve_assignment_pareto_avg(m, 3, w)
    served = [v[r.assignment[j], j] for j in range(5)]
    assert r.worst_case == max(served) <= w + EPS_VAL
    assert sorted(s for b in r.partition for s in b) == list(range(5))
    assert len(r.partition) == len(r.selected) <= 3


matrices = st.integers(1, 8).flatmap(
    lambda n: st.integers(1, 6).flatmap(
        lambda m: st.tuples(
            st.lists(st.lists(st.integers(-4, 4), min_size=m, max_size=m), min_size=n, max_size=n),
            st.lists(st.lists(st.booleans(), min_size=m, max_size=m), min_size=n, max_size=n),
        )
    )
)


@given(matrices)
def test_assignment_solvers_match_enumeration(data):
    values, mask = (np.array(x) for x in data)
    mask = mask | (values > 2)  # keep most cells feasible
    mask[0] = True
    m = ValueMatrix(values.astype(float), mask, tuple(range(len(values))), tuple(range(values.shape[1])))
    masked = m.masked()
    prev = np.inf
    for K in range(1, len(values) + 1):
        exact = enumerate_worst_case(masked, K)
        w = solve_assignment_worst_case(m, K).worst_case
        assert w == exact
        assert w <= prev
        prev = w
        ref = enumerate_pareto(masked, K, w)
        got = solve_assignment_pareto_avg(m, K, w)
        assert got.selected == ref[0]
        assert got.assignment == ref[1]
        assert got.avg_sum == pytest.approx(ref[2], abs=EPS_VAL)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=12))
def test_pareto_real_values_against_enumeration(flat):
    n = len(flat) // 2
    v = np.array(flat[: 2 * n]).reshape(n, 2) if n else np.array([[flat[0], flat[1]]])
    m = vm(v)
    for K in (1, 2):
        w = solve_assignment_worst_case(m, K).worst_case
        got = solve_assignment_pareto_avg(m, K, w)
        ref = enumerate_pareto(m.masked(), K, w)
        assert got.selected == ref[0]


def test_assign_fixed_selection():
    m = vm([[1, 4, 9], [3, 2, 9], [0, 0, 0]])
    r = assign_fixed_selection(m, [0, 1])
    assert r.assignment == (0, 1, 0) and r.worst_case == 9 and r.selected == (0, 1)
    r = assign_fixed_selection(m, [0, 2])
    assert r.selected == (2,)


# k-medoids --------------------------------------------------------------------


def line_instance(coords):
    scenarios = tuple(Scenario(i, sp.csr_matrix([[float(c)]])) for i, c in enumerate(coords))
    return Instance(scenarios, {"target": [0]}, ObjectiveSpec("target"))


def test_distance_examples():
    assert build_distance_matrix(line_instance([0, 0])).values[0, 1] == 0
    assert build_distance_matrix(line_instance([0, 3])).values[0, 1] == 3


def test_distance_matches_dense():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    inst = dense_instance([np.abs(a), np.abs(b)], {"target": [0]}, [])
    assert build_distance_matrix(inst).values[0, 1] == pytest.approx(np.linalg.norm(np.abs(a) - np.abs(b)))


def test_distance_dimension_mismatch():
    class Fake:
        scenarios = (Scenario(0, sp.csr_matrix(np.ones((2, 2)))), Scenario(1, sp.csr_matrix(np.ones((3, 2)))))

    with pytest.raises(DimensionMismatchError):
        build_distance_matrix(Fake())


def test_distance_properties_on_phantom():
    L = build_distance_matrix(small_phantom()).values
    assert np.allclose(L, L.T) and np.all(np.diag(L) == 0)
    for a, b, c in itertools.permutations(range(L.shape[0]), 3):
        assert L[a, c] <= L[a, b] + L[b, c] + 1e-9


def test_k_medoids_examples():
    assert solve_k_medoids(build_distance_matrix(line_instance([2, 2])), 1).total_cost == 0
    r = solve_k_medoids(build_distance_matrix(line_instance([0, 1, 10])), 2)
    assert r.medoids == (0, 2) and r.total_cost == 1
    r = solve_k_medoids(build_distance_matrix(line_instance([0, 1, 10])), 3)
    assert r.total_cost == 0 and r.assignment == (0, 1, 2)
    assert r.clusters() == ((0,), (1,), (2,))


def test_distance_matrix_validation():
    with pytest.raises(ValueError):
        DistanceMatrix([[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        DistanceMatrix([[1, 1], [1, 0]])


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=8))
def test_k_medoids_matches_enumeration(points):
    P = np.array(points, float)
    L = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1))
    L = (L + L.T) / 2
    dist = DistanceMatrix(L)
    prev = np.inf
    for K in range(1, len(points) + 1):
        r = solve_k_medoids(dist, K)
        ref = enumerate_k_medoids(L, K)
        assert r.total_cost == pytest.approx(ref[2], abs=EPS_VAL)
        assert r.medoids == ref[0]
        assert r.total_cost <= prev + EPS_VAL
        prev = r.total_cost
        for b, a in enumerate(r.assignment):
            assert L[b, a] == min(L[b, m] for m in r.medoids)
