"""Command line entry point: ``kadapt gen|run|bench|verify``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import BenchError, RunConfig, run_benchmark, run_instance, verify
from .core import KAdaptError
from .heuristics import Method
from .instgen import (
    DIRECTIONS_1D,
    DIRECTIONS_2D,
    HittingSetSpec,
    PhantomParams,
    generate_hitting_set_instance,
    generate_phantom_instance,
)
from .io import load_instance, save_instance


def _pair(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.lower().split("x"))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _read_sets(path: str) -> list[list[int]]:
    """A JSON list of lists, or one whitespace/comma separated set per line."""
    text = Path(path).read_text()
    try:
        sets = json.loads(text)
    except json.JSONDecodeError:
        sets = [[int(t) for t in line.replace(",", " ").split()] for line in text.splitlines() if line.strip()]
    return sets


def _cmd_gen(args) -> int:
    if args.family == "phantom":
        kw = {"seed": args.seed}
        if args.grid:
            kw["grid"] = _pair(args.grid)
        if args.target:
            kw["target"] = _pair(args.target.replace(",", "x"))
        if args.beamlets:
            b = _pair(args.beamlets)
            if len(b) == 1:
                kw["energy_layers"] = b[0]
            else:
                kw["lateral_spots"], kw["energy_layers"] = b
        if args.shifts:
            kw["shift_directions"] = tuple(args.shifts.split(","))
        if args.ranges:
            kw["range_factors"] = _floats(args.ranges)
        grid = kw.get("grid", PhantomParams().grid)
        if len(grid) == 1:
            kw.setdefault("beams", ("+x",))
            kw.setdefault("target", (max(grid[0] // 3, 0), max(2 * grid[0] // 3, 1)))
            kw.setdefault("oars", ())
            kw.setdefault("shift_directions", tuple(DIRECTIONS_1D))
        elif "shift_directions" not in kw:
            kw["shift_directions"] = tuple(DIRECTIONS_2D)
        instance = generate_phantom_instance(PhantomParams(**kw))
    else:
        spec = HittingSetSpec(args.n, tuple(frozenset(s) for s in _read_sets(args.sets)), args.k)
        instance = generate_hitting_set_instance(spec)
    save_instance(instance, args.output)
    print(f"wrote {args.output}: {instance.n_scenarios} scenarios, "
          f"{instance.n_voxels} voxels, {instance.n_beamlets} beamlets")
    return 0


def _config(args, timing_default: bool) -> RunConfig:
    methods = None
    if getattr(args, "method", None):
        methods = tuple(m.value for m in Method) if args.method == "all" else (args.method,)
    timing = True if args.timing else (False if args.no_timing else timing_default)
    return RunConfig.load(
        args.config,
        methods=methods,
        include_nominal=False if args.no_nominal else None,
        timing=timing,
        save_values=True if args.save_values else None,
        workers=args.workers,
    )


def _print_report(report) -> None:
    for m in report.methods:
        print(f"{m.method:9s} sum_1_to_10={m.sum_1_to_10:.4f} saturation_K={m.saturation_K} "
              f"solver_calls={m.total_solver_calls}")


def _cmd_run(args) -> int:
    report = run_instance(args.instance, args.out, _config(args, timing_default=False))
    _print_report(report)
    return 0


def _cmd_bench(args) -> int:
    suite = Path(args.suite)
    instances = sorted(suite.glob("*.json"))
    results = run_benchmark(instances, args.out, _config(args, timing_default=True))
    for name, rep in results.items():
        print(f"[{name}]")
        _print_report(rep)
    return 0


def _cmd_verify(args) -> int:
    checks = verify(load_instance(args.instance), args.mode)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 1


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (keys of RunConfig)")
    p.add_argument("--no-nominal", action="store_true", help="do not add the nominal scenario to cluster solves")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--timing", action="store_true", help="record wall times")
    g.add_argument("--no-timing", action="store_true", help="leave wall times blank")
    p.add_argument("--save-values", action="store_true", help="write the value-matrix cache per method")
    p.add_argument("--workers", type=int, help="parallel worker processes (default from KADAPT_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kadapt", description="K-adaptable robust planning heuristics")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate an instance file")
    gsub = gen.add_subparsers(dest="family", required=True)
    ph = gsub.add_parser("phantom", help="synthetic voxel phantom")
    ph.add_argument("--grid", help="grid size, e.g. 18x18 or 40")
    ph.add_argument("--target", help="target box lo,hi[,lo,hi]")
    ph.add_argument("--beamlets", help="spots x energy layers per beam, e.g. 6x5 (or layers only in 1D)")
    ph.add_argument("--shifts", help="comma separated shift directions, e.g. 0,+x,-x")
    ph.add_argument("--ranges", help="comma separated range factors, e.g. --ranges=-0.03,0,0.03")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("-o", "--output", required=True)
    hs = gsub.add_parser("hitting-set", help="instance encoding a hitting-set question")
    hs.add_argument("--n", type=int, required=True, help="number of items")
    hs.add_argument("--sets", required=True, help="file with the sets (JSON list of lists or one set per line)")
    hs.add_argument("--k", type=int, required=True, help="number of items allowed")
    hs.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="run heuristics on one instance")
    run.add_argument("--instance", required=True)
    run.add_argument("--method", choices=[m.value for m in Method] + ["all"], default="all")
    _add_run_flags(run)
    run.set_defaults(func=_cmd_run)

    bench = sub.add_parser("bench", help="run all methods on every instance of a directory")
    bench.add_argument("--suite", required=True, help="directory of instance JSON files")
    bench.add_argument("--method", choices=[m.value for m in Method] + ["all"])
    _add_run_flags(bench)
    bench.set_defaults(func=_cmd_bench)

    ver = sub.add_parser("verify", help="check structural properties on one instance")
    ver.add_argument("--instance", required=True)
    ver.add_argument("--mode", choices=["quick", "full"], default="quick")
    ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KAdaptError, BenchError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
