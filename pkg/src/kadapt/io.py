"""File formats: instance JSON and the value-matrix cache.

Instance JSON (``format = "kadapt-instance"``, ``version = 1``)::

    {
      "format": "kadapt-instance", "version": 1,
      "n_voxels": int, "n_beamlets": int, "nominal_id": int | null,
      "structures": {name: [voxel indices]},
      "objective": {"structure": name, "kind": "min_dose_in_target" | "sum_dose"},
      "constraints": [{"structure": name, "kind": "max_dose" | "mean_dose" | "min_dose", "bound": float}],
      "scenarios": [{"id": int, "label": str, "row_ptr": [...], "col_idx": [...], "vals": [...]}],
      "metadata": {...}
    }

Value-matrix cache (``format = "kadapt-value-matrix"``, ``version = 1``) holds
``plan_ids``, ``scenario_ids``, ``values`` (raw values, infeasible cells
included) and ``feasible``.  Both files are written with sorted keys, so equal inputs give
equal bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import (
    ConstraintKind,
    ConstraintSpec,
    Instance,
    InstanceError,
    ObjectiveKind,
    ObjectiveSpec,
    Scenario,
    ValueMatrix,
)

INSTANCE_FORMAT = "kadapt-instance"
VALUE_MATRIX_FORMAT = "kadapt-value-matrix"
VERSION = 1


def instance_to_dict(instance: Instance) -> dict:
    scenarios = []
    for s in instance.scenarios:
        m = s.dose_matrix.tocsr()
        m.sort_indices()
        scenarios.append({
            "id": s.id,
            "label": s.label,
            "row_ptr": m.indptr.tolist(),
            "col_idx": m.indices.tolist(),
            "vals": m.data.tolist(),
        })
    return {
        "format": INSTANCE_FORMAT,
        "version": VERSION,
        "n_voxels": instance.n_voxels,
        "n_beamlets": instance.n_beamlets,
        "nominal_id": instance.nominal_id,
        "structures": {k: [int(i) for i in v] for k, v in instance.structures.items()},
        "objective": {"structure": instance.objective.structure, "kind": instance.objective.kind.value},
        "constraints": [
            {"structure": c.structure, "kind": c.kind.value, "bound": float(c.bound)} for c in instance.constraints
        ],
        "scenarios": scenarios,
        "metadata": instance.metadata,
    }


def instance_from_dict(d: dict) -> Instance:
    if d.get("format") != INSTANCE_FORMAT:
        raise InstanceError(f"not an instance file (format={d.get('format')!r})")
    if d.get("version") != VERSION:
        raise InstanceError(f"unsupported instance version {d.get('version')!r}")
    shape = (int(d["n_voxels"]), int(d["n_beamlets"]))
    scenarios = tuple(
        Scenario(
            int(s["id"]),
            sp.csr_matrix((np.asarray(s["vals"], float), np.asarray(s["col_idx"]), np.asarray(s["row_ptr"])), shape=shape),
            s.get("label", ""),
        )
        for s in d["scenarios"]
    )
    return Instance(
        scenarios,
        {k: np.asarray(v, dtype=np.int64) for k, v in d["structures"].items()},
        ObjectiveSpec(d["objective"]["structure"], ObjectiveKind(d["objective"]["kind"])),
        tuple(ConstraintSpec(c["structure"], ConstraintKind(c["kind"]), float(c["bound"])) for c in d["constraints"]),
        d.get("nominal_id"),
        d.get("metadata", {}),
    )


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps(instance_to_dict(instance)))


def load_instance(path: str | Path) -> Instance:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InstanceError(f"{path}: invalid JSON ({e})") from e
    return instance_from_dict(d)


def save_value_matrix(vm: ValueMatrix, path: str | Path) -> None:
    d = {
        "format": VALUE_MATRIX_FORMAT,
        "version": VERSION,
        "plan_ids": list(vm.plan_ids),
        "scenario_ids": list(vm.scenario_ids),
        "values": vm.values.tolist(),
        "feasible": vm.feasible.astype(bool).tolist(),
    }
    Path(path).write_text(dumps(d))


def load_value_matrix(path: str | Path) -> ValueMatrix:
    d = json.loads(Path(path).read_text())
    if d.get("format") != VALUE_MATRIX_FORMAT or d.get("version") != VERSION:
        raise InstanceError(f"{path}: not a version {VERSION} value-matrix cache")
    feas = np.asarray(d["feasible"], dtype=bool)
    vals = np.asarray(d["values"], dtype=float)
    return ValueMatrix(vals, feas, tuple(d["plan_ids"]), tuple(d["scenario_ids"]))
