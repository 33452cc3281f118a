"""Metrics, result files and the benchmark / verification drivers.

CSV schema, one row per method and K::

    method,K,w_star,reported,sum_flag,saturation_flag,solver_calls,wall_time_s,worst_cluster_size

``w_star`` is the internal (minimized) worst-case value and ``reported`` its
negation, i.e. the worst-case target minimum dose for phantom instances.
``sum_flag`` is 1 for the K counted in ``sum_1_to_10``; ``saturation_flag``
is 1 on the saturation K.  ``solver_calls`` counts robust solves made while
processing that K; the initial per-scenario solves count toward the first K
processed.  ``wall_time_s`` is blank unless timing is on, since timings would
break byte-identical reruns.  Floats are written with ``repr`` and read back
exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assign import solve_assignment_pareto_avg, solve_assignment_worst_case
from .core import EPS_VAL, KAdaptError, ValueMatrix
from .heuristics import HeuristicRun, Method, enriched_pool, exact_worst_case, jsonl_logger, run_method
from .instgen import hitting_set_oracle, hitting_set_spec_from_metadata, proof_plans
from .io import dumps, load_instance, save_value_matrix
from .lp import RobustSubproblem, solve_robust_subproblem
from .oracles import enumerate_pareto, enumerate_worst_case

CSV_COLUMNS = (
    "method",
    "K",
    "w_star",
    "reported",
    "sum_flag",
    "saturation_flag",
    "solver_calls",
    "wall_time_s",
    "worst_cluster_size",
)
SUM_MAX_K = 10
WORKERS_ENV = "KADAPT_WORKERS"


class BenchError(KAdaptError, RuntimeError):
    pass


@dataclass(frozen=True)
class MethodReport:
    """Per-K metrics of one run."""

    method: str
    w_star: tuple[float, ...]
    solver_calls: tuple[int, ...]
    worst_cluster_size: tuple[int, ...]
    wall_times: tuple[float | None, ...] | None = None

    @property
    def T(self) -> int:
        return len(self.w_star)

    @property
    def reported(self) -> tuple[float, ...]:
        return tuple(0.0 - w for w in self.w_star)

    @property
    def sum_1_to_10(self) -> float:
        return float(sum(self.reported[: min(SUM_MAX_K, self.T)]))

    @property
    def saturation_K(self) -> int:
        final = self.w_star[-1]
        return next(k for k, w in enumerate(self.w_star, 1) if abs(w - final) <= EPS_VAL)

    @property
    def total_solver_calls(self) -> int:
        return int(sum(self.solver_calls))

    def summary(self) -> dict:
        d = {
            "method": self.method,
            "T": self.T,
            "reported": list(self.reported),
            "w_star": list(self.w_star),
            "sum_1_to_10": self.sum_1_to_10,
            "saturation_K": self.saturation_K,
            "solver_calls": self.total_solver_calls,
            "worst_cluster_size": list(self.worst_cluster_size),
        }
        if self.wall_times is not None:
            d["wall_time_s"] = float(sum(t for t in self.wall_times if t is not None))
        return d


@dataclass(frozen=True)
class BenchReport:
    methods: tuple[MethodReport, ...]
    label: str = "worst_case_Dmin"
    meta: dict = field(default_factory=dict, compare=False)

    def method(self, name: str) -> MethodReport:
        return next(m for m in self.methods if m.method == name)

    def summary(self) -> dict:
        return {"label": self.label, "methods": [m.summary() for m in self.methods], **self.meta}


def compute_metrics(run: HeuristicRun, *, timing: bool = False) -> MethodReport:
    Ks = [r.K for r in run.records]
    if not Ks or Ks != list(range(1, len(Ks) + 1)):
        raise BenchError(f"incomplete run: records cover K = {Ks}")
    return MethodReport(
        run.method.value,
        tuple(float(r.w_star) for r in run.records),
        tuple(int(r.solver_calls) for r in run.records),
        tuple(int(r.worst_cluster_size) for r in run.records),
        tuple(float(r.wall_time) for r in run.records) if timing else None,
    )


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in report.methods:
        sat = m.saturation_K
        for k in range(1, m.T + 1):
            wt = None if m.wall_times is None else m.wall_times[k - 1]
            w.writerow([_fmt(x) for x in (
                m.method, k, m.w_star[k - 1], m.reported[k - 1], int(k <= SUM_MAX_K), int(k == sat),
                m.solver_calls[k - 1], wt, m.worst_cluster_size[k - 1],
            )])
    return buf.getvalue()


def parse_csv(text: str, label: str = "worst_case_Dmin") -> BenchReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
        raise BenchError(f"unexpected CSV columns {tuple(rows[0].keys())}")
    order: list[str] = []
    by_method: dict[str, list[dict]] = {}
    for r in rows:
        if r["method"] not in by_method:
            order.append(r["method"])
            by_method[r["method"]] = []
        by_method[r["method"]].append(r)
    methods = []
    for name in order:
        rs = sorted(by_method[name], key=lambda r: int(r["K"]))
        if [int(r["K"]) for r in rs] != list(range(1, len(rs) + 1)):
            raise BenchError(f"method {name}: K values are not 1..T")
        timed = any(r["wall_time_s"] != "" for r in rs)
        methods.append(MethodReport(
            name,
            tuple(float(r["w_star"]) for r in rs),
            tuple(int(r["solver_calls"]) for r in rs),
            tuple(int(r["worst_cluster_size"]) for r in rs),
            tuple(float(r["wall_time_s"]) if r["wall_time_s"] else None for r in rs) if timed else None,
        ))
    return BenchReport(tuple(methods), label)


# ---------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class RunConfig:
    methods: tuple[str, ...] = tuple(m.value for m in Method)
    include_nominal: bool | None = None
    timing: bool = False
    save_values: bool = False
    max_iterations: int = 1000
    workers: int = 1

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "RunConfig":
        """Defaults, then the JSON config file, then the environment, then explicit overrides."""
        d: dict = {}
        if path is not None:
            d.update(json.loads(Path(path).read_text()))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise BenchError(f"unknown config keys {sorted(unknown)}")
        if WORKERS_ENV in os.environ:
            d["workers"] = int(os.environ[WORKERS_ENV])
        d.update({k: v for k, v in overrides.items() if v is not None})
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)


def _label(instance) -> str:
    return "objective" if instance.metadata.get("family") == "hitting_set" else "worst_case_Dmin"


def _run_one(instance_path: str, method: str, out_dir: str, cfg: RunConfig) -> MethodReport:
    """Run one method on one instance and write its log (and value cache)."""
    t0 = time.perf_counter()
    instance = load_instance(instance_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"run_log_{method}.jsonl", "w") as fh:
        write = jsonl_logger(fh)

        def log(event: dict):
            if not cfg.timing:
                event = {k: v for k, v in event.items() if k != "elapsed_s"}
            write({"method": method, **event})

        run = run_method(instance, method, include_nominal=cfg.include_nominal,
                         max_iterations=cfg.max_iterations, log=log)
    if cfg.save_values:
        vals = [np.array([instance.objective_value(s.id, p.weights) for s in instance.scenarios]) for p in run.pool]
        feas = [np.array([instance.feasibility(s.id, p.weights) for s in instance.scenarios]) for p in run.pool]
        save_value_matrix(
            ValueMatrix(np.array(vals), np.array(feas), tuple(p.id for p in run.pool),
                        tuple(s.id for s in instance.scenarios)),
            out / f"values_{method}.json",
        )
    report = compute_metrics(run, timing=cfg.timing)
    if cfg.timing:
        # charge loading and evaluation overhead to K = 1 so the total covers the whole pipeline
        total = time.perf_counter() - t0
        rest = float(sum(report.wall_times[1:]))
        report = MethodReport(report.method, report.w_star, report.solver_calls, report.worst_cluster_size,
                              (max(total - rest, 0.0),) + tuple(report.wall_times[1:]))
    return report


def _run_many(jobs: Sequence[tuple[str, str, str]], cfg: RunConfig) -> list[MethodReport]:
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            futures = [ex.submit(_run_one, p, m, o, cfg) for p, m, o in jobs]
            return [f.result() for f in futures]
    return [_run_one(p, m, o, cfg) for p, m, o in jobs]


def run_instance(instance_path: str | Path, out_dir: str | Path, cfg: RunConfig) -> BenchReport:
    """Run the configured methods on one instance; writes results.csv and summary.json."""
    methods = [Method(m).value for m in cfg.methods]
    if not methods:
        raise BenchError("no methods selected")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = _run_many([(str(instance_path), m, str(out)) for m in methods], cfg)
    label = _label(load_instance(instance_path))
    report = BenchReport(tuple(reports), label, {"instance": Path(instance_path).name})
    (out / "results.csv").write_text(write_csv(report))
    (out / "summary.json").write_text(dumps(report.summary()))
    return report


def run_benchmark(instances: Iterable[str | Path], out_dir: str | Path, cfg: RunConfig) -> dict[str, BenchReport]:
    """Every configured method on every instance; one subdirectory per instance plus a merged summary."""
    methods = [Method(m).value for m in cfg.methods]
    if not methods:
        raise BenchError("no methods selected")
    paths = sorted(Path(p) for p in instances)
    if not paths:
        raise BenchError("no instances found")
    out = Path(out_dir)
    jobs = [(str(p), m, str(out / p.stem)) for p in paths for m in methods]
    reports = _run_many(jobs, cfg)
    results: dict[str, BenchReport] = {}
    for k, p in enumerate(paths):
        chunk = tuple(reports[k * len(methods):(k + 1) * len(methods)])
        rep = BenchReport(chunk, _label(load_instance(p)), {"instance": p.name})
        sub = out / p.stem
        (sub / "results.csv").write_text(write_csv(rep))
        (sub / "summary.json").write_text(dumps(rep.summary()))
        results[p.stem] = rep
    (out / "summary.json").write_text(dumps({name: r.summary() for name, r in results.items()}))
    return results


# ---------------------------------------------------------------------------
# verification


def verify(instance, mode: str = "quick") -> dict[str, bool]:
    """Check the structural properties on one instance.

    ``quick`` runs the main method only; ``full`` runs all four methods and,
    for instances with at most 5 scenarios, compares against the exact value
    over the robust plans of every cluster.
    """
    if mode not in ("quick", "full"):
        raise ValueError(f"unknown verify mode {mode!r}")
    checks: dict[str, bool] = {}
    T = instance.n_scenarios
    hitting = instance.metadata.get("family") == "hitting_set"

    if hitting:
        spec = hitting_set_spec_from_metadata(instance)
        if T > 10:
            raise BenchError("hitting-set verification enumerates clusters; T must be <= 10")
        pool = enriched_pool(instance, extra_plans=proof_plans(spec))
        exact = exact_worst_case(pool, spec.K_query)
        checks["hitting_set_iff"] = (abs(exact) <= EPS_VAL) == hitting_set_oracle(spec)
        return checks

    methods = [Method.MAIN] if mode == "quick" else list(Method)
    runs = {m: run_method(instance, m) for m in methods}
    for m, run in runs.items():
        w = run.w_star
        checks[f"{m.value}_monotone"] = bool(np.all(np.diff(w) <= EPS_VAL))
        if m is not Method.KMEDOIDS:
            checks[f"{m.value}_redistribution_le_generation"] = all(
                r.w_star <= r.generation_w + EPS_VAL for r in run.records
            )
    robust = solve_robust_subproblem(RobustSubproblem(instance, range(T))).value
    checks["k1_equals_robust"] = abs(runs[Method.MAIN].records[0].w_star - robust) <= EPS_VAL
    if len(runs) > 1:
        finals = [r.records[-1].w_star for r in runs.values()]
        checks["methods_agree_at_T"] = max(finals) - min(finals) <= EPS_VAL

    # assignment solvers against enumeration on a small block of the pool
    run = runs[Method.MAIN]
    vals = np.array([[instance.objective_value(s, p.weights) for s in range(T)] for p in run.pool])
    feas = np.array([[instance.feasibility(s, p.weights) for s in range(T)] for p in run.pool])
    rows, cols = min(8, len(run.pool)), min(6, T)
    vm = ValueMatrix(vals[:rows, :cols], feas[:rows, :cols], tuple(range(rows)), tuple(range(cols)))
    masked = vm.masked()
    ok = True
    if np.isfinite(masked).any(axis=0).all():
        for K in range(1, rows + 1):
            exact = enumerate_worst_case(masked, K)
            if not np.isfinite(exact):
                continue
            w = solve_assignment_worst_case(vm, K).worst_case
            ref = enumerate_pareto(masked, K, w)
            got = solve_assignment_pareto_avg(vm, K, w)
            ok &= abs(w - exact) <= EPS_VAL and ref is not None and abs(got.avg_sum - ref[2]) <= EPS_VAL
    checks["assignment_matches_enumeration"] = bool(ok)

    if mode == "full" and T <= 5:
        pool = enriched_pool(instance)
        checks["within_exact_bound"] = all(
            exact_worst_case(pool, r.K) <= r.w_star + EPS_VAL for r in runs[Method.MAIN].records
        )
    return checks
