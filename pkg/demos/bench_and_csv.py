"""Run all four methods through the file-based harness and read the CSV back."""

import tempfile
from pathlib import Path

from kadapt import PhantomParams, RunConfig, generate_phantom_instance, parse_csv, save_instance
from kadapt.bench import run_instance

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    save_instance(generate_phantom_instance(PhantomParams(shift_directions=("0", "+y"), seed=1)), tmp / "inst.json")
    report = run_instance(tmp / "inst.json", tmp / "out", RunConfig())
    text = (tmp / "out" / "results.csv").read_text()
    print("\n".join(text.splitlines()[:4]), "\n...")
    assert parse_csv(text, report.label) == report
    for m in report.methods:
        print(f"{m.method:9s} K=1 {m.reported[0]:.3f}  K=T {m.reported[-1]:.3f}  "
              f"saturation {m.saturation_K}  robust solves {m.total_solver_calls}")
    print("files:", sorted(p.name for p in (tmp / "out").iterdir()))
