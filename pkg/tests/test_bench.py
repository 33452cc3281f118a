import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import random_small_instance, small_phantom
from kadapt import (
    EPS_VAL,
    BenchReport,
    HittingSetSpec,
    MethodReport,
    RunConfig,
    compute_metrics,
    generate_hitting_set_instance,
    parse_csv,
    run_main,
    save_instance,
    verify,
    write_csv,
)
from kadapt.bench import BenchError, run_benchmark, run_instance


def report(w, method="main"):
    T = len(w)
    return MethodReport(method, tuple(float(x) for x in w), (1,) * T, (1,) * T)


def test_metrics_single_scenario():
    m = report([-7.5])
    assert m.sum_1_to_10 == 7.5 and m.saturation_K == 1


def test_metrics_saturation_constant_tail():
    m = report([-1, -2, -3, -4, -4, -4])
    assert m.saturation_K == 4
    assert m.sum_1_to_10 == 18


def test_metrics_sum_stops_at_ten():
    m = report([-float(k) for k in range(1, 13)])
    assert m.sum_1_to_10 == 55
    assert m.saturation_K == 12


def test_reported_zero_is_positive_zero():
    assert str(report([0.0]).reported[0]) == "0.0"


@given(st.integers(0, 10_000))
def test_metrics_match_rescan_of_records(seed):
    inst = random_small_instance(np.random.default_rng(seed), max_scenarios=3)
    run = run_main(inst)
    m = compute_metrics(run)
    ws = [r.w_star for r in run.records]
    assert m.sum_1_to_10 == pytest.approx(sum(-w for w in ws[:10]))
    sat = min(k for k in range(1, len(ws) + 1) if abs(ws[k - 1] - ws[-1]) <= EPS_VAL)
    assert m.saturation_K == sat
    assert m.total_solver_calls == run.solver_calls


def test_incomplete_run_rejected():
    run = run_main(random_small_instance(np.random.default_rng(0), max_scenarios=1))
    broken = type(run)(run.method, (), run.pool, {}, run.objective_kind, 0)
    with pytest.raises(BenchError, match="incomplete"):
        compute_metrics(broken)


finite = st.floats(-1e6, 1e6, allow_nan=False)
method_reports = st.integers(1, 6).flatmap(lambda T: st.builds(
    MethodReport,
    st.sampled_from(["main", "lsp", "aosg", "kmedoids"]),
    st.lists(finite, min_size=T, max_size=T).map(tuple),
    st.lists(st.integers(0, 50), min_size=T, max_size=T).map(tuple),
    st.lists(st.integers(1, 9), min_size=T, max_size=T).map(tuple),
    st.one_of(st.none(), st.lists(st.floats(0, 100), min_size=T, max_size=T).map(tuple)),
))


@given(st.lists(method_reports, min_size=1, max_size=4, unique_by=lambda m: m.method))
def test_csv_roundtrip(reports):
    rep = BenchReport(tuple(reports))
    assert parse_csv(write_csv(rep)) == rep


def test_csv_flags():
    text = write_csv(BenchReport((report([-1, -2, -2] + [-2] * 9),)))
    rows = text.splitlines()
    assert rows[0] == "method,K,w_star,reported,sum_flag,saturation_flag,solver_calls,wall_time_s,worst_cluster_size"
    assert rows[1] == "main,1,-1.0,1.0,1,0,1,,1"
    assert rows[2].split(",")[5] == "1"
    assert rows[11].split(",")[4] == "0"


def test_csv_rejects_wrong_columns():
    with pytest.raises(BenchError):
        parse_csv("a,b\n1,2\n")


# run configuration ------------------------------------------------------------------


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"methods": ["main"], "workers": 3, "timing": True}))
    assert RunConfig.load(cfg).workers == 3
    monkeypatch.setenv("KADAPT_WORKERS", "2")
    c = RunConfig.load(cfg)
    assert c.workers == 2 and c.methods == ("main",) and c.timing
    assert RunConfig.load(cfg, workers=1, timing=None).workers == 1


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"method": "main"}))
    with pytest.raises(BenchError, match="unknown"):
        RunConfig.load(cfg)


# running -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def phantom_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("inst") / "phantom.json"
    save_instance(small_phantom(directions=("0", "+x"), ranges=(-0.03, 0.03)), path)
    return path


def test_no_methods_selected(tmp_path, phantom_file):
    with pytest.raises(BenchError, match="no methods selected"):
        run_instance(phantom_file, tmp_path, RunConfig(methods=()))


def test_run_instance_outputs_and_byte_identical_rerun(tmp_path, phantom_file):
    cfg = RunConfig(save_values=True)
    a = run_instance(phantom_file, tmp_path / "a", cfg)
    run_instance(phantom_file, tmp_path / "b", cfg)
    assert len(a.methods) == 4
    finals = [m.w_star[-1] for m in a.methods]
    assert max(finals) - min(finals) <= EPS_VAL
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(["results.csv", "summary.json"] + [f"run_log_{m}.jsonl" for m in
                                                              ("main", "lsp", "aosg", "kmedoids")]
                           + [f"values_{m}.json" for m in ("main", "lsp", "aosg", "kmedoids")])
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = (tmp_path / "a" / "results.csv").read_text()
    assert parse_csv(text, a.label) == a
    assert len(text.splitlines()) == 1 + 4 * a.methods[0].T


def test_timing_fills_wall_time(tmp_path, phantom_file):
    rep = run_instance(phantom_file, tmp_path, RunConfig(methods=("main",), timing=True))
    assert all(t is not None and t >= 0 for t in rep.methods[0].wall_times)
    log = (tmp_path / "run_log_main.jsonl").read_text().splitlines()
    assert "elapsed_s" in json.loads(log[0])
    assert "wall_time_s" in json.loads((tmp_path / "summary.json").read_text())["methods"][0]


def test_run_benchmark_with_workers(tmp_path, phantom_file):
    hs = tmp_path / "hs.json"
    save_instance(generate_hitting_set_instance(HittingSetSpec(3, (frozenset({1, 2}), frozenset({3})), 1)), hs)
    out = tmp_path / "out"
    res = run_benchmark([phantom_file, hs], out, RunConfig(methods=("main", "kmedoids"), workers=2))
    assert set(res) == {"phantom", "hs"}
    assert res["hs"].label == "objective" and res["phantom"].label == "worst_case_Dmin"
    merged = json.loads((out / "summary.json").read_text())
    assert set(merged) == {"phantom", "hs"}
    serial = run_benchmark([phantom_file, hs], tmp_path / "serial", RunConfig(methods=("main", "kmedoids")))
    assert (out / "hs" / "results.csv").read_bytes() == (tmp_path / "serial" / "hs" / "results.csv").read_bytes()
    assert serial["phantom"] == res["phantom"]


def test_run_benchmark_needs_instances(tmp_path):
    with pytest.raises(BenchError, match="no instances"):
        run_benchmark([], tmp_path, RunConfig())


# verify ------------------------------------------------------------------------------------


def test_verify_phantom_quick():
    checks = verify(small_phantom(directions=("0", "+x"), ranges=(0.0, 0.03)), "quick")
    assert checks and all(checks.values())


def test_verify_full_tiny():
    inst = random_small_instance(np.random.default_rng(3), max_scenarios=4)
    checks = verify(inst, "full")
    assert "within_exact_bound" in checks and all(checks.values())


@pytest.mark.parametrize("sets,K", [([{1, 2}, {2, 3}], 1), ([{1}, {2}], 1), ([{1}, {2}], 2)])
def test_verify_hitting_set(sets, K):
    # the check passes on yes and no instances alike: the exact value is 0 iff a hitting set exists
    spec = HittingSetSpec(3, tuple(frozenset(s) for s in sets), K)
    assert verify(generate_hitting_set_instance(spec)) == {"hitting_set_iff": True}


def test_verify_bad_mode():
    with pytest.raises(ValueError):
        verify(small_phantom(), "slow")
