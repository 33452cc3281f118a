"""Instance generators.

Two families:

* synthetic phantoms: a 1D or 2D voxel grid irradiated by pencil beamlets with
  a Bragg-peak-like depth profile, with scenarios built from rigid setup
  shifts and range errors;
* hitting-set instances, mapping a hitting-set question onto the min-max-min
  planning problem (one scenario per set).
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

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
)

# unit shift vectors (dy, dx) for the 2D analogue of the 19-direction family
DIRECTIONS_2D = {
    "0": (0, 0),
    "+x": (0, 1),
    "-x": (0, -1),
    "+y": (1, 0),
    "-y": (-1, 0),
    "+x+y": (1, 1),
    "+x-y": (-1, 1),
    "-x+y": (1, -1),
    "-x-y": (-1, -1),
}
DIRECTIONS_1D = {"0": (0,), "+x": (1,), "-x": (-1,)}

# bounds after the planning constraint table used for head and neck cases (Gy)
TARGET_MAX = 59.85
RIND_MAX = 57.0
# integral dose budget: mean dose over the whole grid (Gy)
BODY_MEAN = 9.75


@dataclass(frozen=True)
class OarSpec:
    name: str
    box: tuple[int, ...]  # (lo, hi) per axis, half open
    kind: ConstraintKind
    bound: float


def _default_oars() -> tuple[OarSpec, ...]:
    return (
        OarSpec("oar_serial", (6, 11, 13, 16), ConstraintKind.MAX_DOSE, 54.0),
        OarSpec("oar_parallel", (1, 4, 6, 11), ConstraintKind.MEAN_DOSE, 26.0),
    )


@dataclass(frozen=True)
class PhantomParams:
    """Geometry, beam layout, scenario family and bounds of a phantom.

    ``grid`` has one or two axes.  Boxes are half-open ``(lo, hi)`` pairs per
    axis.  Beams enter along ``+x`` (from column 0) and, in 2D, ``+y`` (from
    row 0).  Shifts are integer voxel translations; diagonal directions move
    ``shift_magnitude`` voxels along both axes.

    Every beamlet deposits the same total dose in every scenario (columns are
    normalized after shifting), so the body mean-dose budget does not depend
    on the scenario and a plan that meets it meets it everywhere.  The hot-spot
    bounds on target and rind are off by default: with them on, a plan tuned
    to one scenario is infeasible on almost every other one.
    """

    grid: tuple[int, ...] = (18, 18)
    target: tuple[int, ...] = (6, 11, 6, 11)
    oars: tuple[OarSpec, ...] = field(default_factory=_default_oars)
    rind_width: int = 1
    target_max: float | None = None
    rind_max: float | None = None
    body_mean: float | None = BODY_MEAN
    beams: tuple[str, ...] = ("+x", "+y")
    lateral_spots: int = 6
    energy_layers: int = 5
    spot_margin: float = 1.0
    lateral_sigma: float = 0.8
    peak_sigma: float = 0.7
    plateau: float = 0.3
    peak: float = 1.0
    distal_falloff: float = 0.4
    heterogeneity: float = 0.1
    shift_magnitude: int = 1
    shift_directions: tuple[str, ...] = tuple(DIRECTIONS_2D)
    range_factors: tuple[float, ...] = (-0.03, 0.0, 0.03)
    cutoff: float = 1e-4
    seed: int = 0

    @property
    def ndim(self) -> int:
        return len(self.grid)

    @property
    def n_beamlets(self) -> int:
        per_beam = self.energy_layers if self.ndim == 1 else self.lateral_spots * self.energy_layers
        return len(self.beams) * per_beam

    @property
    def n_scenarios(self) -> int:
        return len(self.scenario_grid())

    def scenario_grid(self) -> list[tuple[str, float]]:
        dirs = list(dict.fromkeys(self.shift_directions))
        ranges = list(dict.fromkeys(float(r) for r in self.range_factors))
        if "0" not in dirs:
            dirs.insert(0, "0")
        if 0.0 not in ranges:
            ranges.insert(len(ranges) // 2, 0.0)
        return [(d, r) for d in dirs for r in ranges]


def _box_indices(grid: tuple[int, ...], box: tuple[int, ...]) -> np.ndarray:
    if len(box) != 2 * len(grid):
        raise InstanceError(f"box {box} does not match grid {grid}")
    mask = np.zeros(grid, dtype=bool)
    sl = []
    for ax, n in enumerate(grid):
        lo, hi = box[2 * ax], box[2 * ax + 1]
        if not 0 <= lo < hi <= n:
            raise InstanceError(f"box {box} leaves the grid {grid}")
        sl.append(slice(lo, hi))
    mask[tuple(sl)] = True
    return mask


def _rind(target: np.ndarray, width: int) -> np.ndarray:
    grown = target.copy()
    for _ in range(width):
        step = grown.copy()
        for ax in range(grown.ndim):
            for d in (1, -1):
                step |= _shift(grown, tuple(d if a == ax else 0 for a in range(grown.ndim)))
        grown = step
    # Chebyshev neighborhood: also grow diagonally in 2D
    if target.ndim == 2:
        for _ in range(width):
            step = grown.copy()
            for dy, dx in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                step |= _shift(grown, (dy, dx))
            grown = step
    return grown & ~target


def _shift(arr: np.ndarray, offset: tuple[int, ...]) -> np.ndarray:
    """Translate ``arr`` by ``offset`` voxels; content leaving the grid is dropped."""
    out = np.zeros_like(arr)
    src, dst = [], []
    for n, o in zip(arr.shape, offset):
        if abs(o) >= n:
            return out
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _depth_dose(depth: np.ndarray, peak_depth: float, p: PhantomParams) -> np.ndarray:
    distal = 1.0 / (1.0 + np.exp(np.clip((depth - peak_depth) / p.distal_falloff, -50, 50)))
    bump = np.exp(-0.5 * ((depth - peak_depth) / p.peak_sigma) ** 2)
    return p.plateau * distal + p.peak * bump


def _beamlet_layout(p: PhantomParams, target: np.ndarray):
    """(beam, lateral position or None, peak depth in water-equivalent voxels)."""
    layout = []
    for beam in p.beams:
        axis = 1 if beam == "+x" else 0
        if p.ndim == 1:
            axis = 0
        coords = np.argwhere(target)
        depth_lo = coords[:, axis].min()
        depth_hi = coords[:, axis].max() + 1
        m = p.spot_margin
        depths = np.linspace(depth_lo + 0.5 - m, depth_hi - 0.5 + m, p.energy_layers)
        if p.ndim == 1:
            layout.extend((beam, None, float(z)) for z in depths)
            continue
        lat_axis = 1 - axis
        lat_lo = coords[:, lat_axis].min()
        lat_hi = coords[:, lat_axis].max() + 1
        laterals = np.linspace(lat_lo - m, lat_hi - 1 + m, p.lateral_spots)
        layout.extend((beam, float(l), float(z)) for l in laterals for z in depths)
    return layout


def _beamlet_patterns(p: PhantomParams, target: np.ndarray, density: np.ndarray, range_factor: float) -> np.ndarray:
    """Dose per unit weight, shape (n_voxels, n_beamlets), before any shift."""
    cols = []
    for beam, lateral, peak_depth in _beamlet_layout(p, target):
        axis = 0 if p.ndim == 1 else (1 if beam == "+x" else 0)
        # water-equivalent depth at voxel centers along the beam axis
        wed = np.cumsum(density, axis=axis) - 0.5 * density
        dose = _depth_dose(wed, peak_depth * (1.0 + range_factor), p)
        if lateral is not None:
            lat_axis = 1 - axis
            pos = np.arange(p.grid[lat_axis], dtype=float) - lateral
            prof = np.exp(-0.5 * (pos / p.lateral_sigma) ** 2)
            prof[np.abs(pos) > 3 * p.lateral_sigma] = 0.0
            dose = dose * (prof[None, :] if lat_axis == 1 else prof[:, None])
        cols.append(dose)
    pats = np.stack(cols, axis=-1)
    pats[pats < p.cutoff * pats.max()] = 0.0
    return pats


def generate_phantom_instance(params: PhantomParams) -> Instance:
    p = params
    if p.ndim not in (1, 2):
        raise InstanceError("grid must have one or two axes")
    directions = DIRECTIONS_1D if p.ndim == 1 else DIRECTIONS_2D
    for d in p.shift_directions:
        if d not in directions:
            raise InstanceError(f"unknown shift direction {d!r} for a {p.ndim}D grid")
    for b in p.beams:
        if b not in ("+x", "+y") or (p.ndim == 1 and b != "+x"):
            raise InstanceError(f"unsupported beam {b!r}")
    if any(r <= -1 for r in p.range_factors):
        raise InstanceError("range factors must exceed -1")

    target = _box_indices(p.grid, p.target)
    rind = _rind(target, p.rind_width)
    structures = {"target": np.flatnonzero(target.ravel())}
    if rind.any():
        structures["rind"] = np.flatnonzero(rind.ravel())
    structures["body"] = np.arange(target.size)
    constraints = []
    if p.target_max is not None:
        constraints.append(ConstraintSpec("target", ConstraintKind.MAX_DOSE, p.target_max))
    if p.rind_max is not None and "rind" in structures:
        constraints.append(ConstraintSpec("rind", ConstraintKind.MAX_DOSE, p.rind_max))
    if p.body_mean is not None:
        constraints.append(ConstraintSpec("body", ConstraintKind.MEAN_DOSE, p.body_mean))
    for oar in p.oars:
        kind = ConstraintKind(oar.kind)
        if not kind.is_overdose:
            raise InstanceError("phantom constraints must be of overdose type")
        mask = _box_indices(p.grid, tuple(oar.box))
        structures[oar.name] = np.flatnonzero(mask.ravel())
        constraints.append(ConstraintSpec(oar.name, kind, oar.bound))

    rng = np.random.default_rng(p.seed)
    density = 1.0 + p.heterogeneity * rng.uniform(-1.0, 1.0, size=p.grid)

    cache: dict[float, np.ndarray] = {}
    scenarios, nominal_id = [], None
    for sid, (dname, r) in enumerate(p.scenario_grid()):
        if r not in cache:
            cache[r] = _beamlet_patterns(p, target, density, r)
        unit = directions[dname]
        offset = tuple(p.shift_magnitude * u for u in unit)
        shifted = _shift(cache[r], offset + (0,))
        flat = shifted.reshape(-1, shifted.shape[-1])
        # unit weight adds 0.01 Gy to the body mean in every scenario
        flat = flat / flat.sum(axis=0) * (flat.shape[0] / 100.0)
        mat = sp.csr_matrix(flat)
        label = f"shift={dname},range={r * 100:+g}%"
        scenarios.append(Scenario(sid, mat, label))
        if dname == "0" and r == 0.0:
            nominal_id = sid

    meta = {"family": "phantom", "params": _params_json(p)}
    return Instance(
        tuple(scenarios), structures, ObjectiveSpec("target"), tuple(constraints), nominal_id, meta
    )


def _params_json(p: PhantomParams) -> dict:
    d = asdict(p)
    d["oars"] = [{**o, "kind": ConstraintKind(o["kind"]).value} for o in d["oars"]]
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    d["oars"] = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in o.items()} for o in d["oars"]]
    return d


def phantom_params_from_json(d: dict) -> PhantomParams:
    d = dict(d)
    d["oars"] = tuple(OarSpec(o["name"], tuple(o["box"]), ConstraintKind(o["kind"]), o["bound"]) for o in d["oars"])
    for k in ("grid", "target", "beams", "shift_directions", "range_factors"):
        d[k] = tuple(d[k])
    return PhantomParams(**d)


# ---------------------------------------------------------------------------
# hitting set


@dataclass(frozen=True)
class HittingSetSpec:
    n_items: int
    sets: tuple[frozenset[int], ...]
    K_query: int = 1

    def __post_init__(self):
        sets = tuple(frozenset(int(i) for i in s) for s in self.sets)
        if self.n_items < 1:
            raise InstanceError("need at least one item")
        if not sets:
            raise InstanceError("need at least one set")
        for s in sets:
            if not s:
                raise InstanceError("sets must be nonempty")
            if min(s) < 1 or max(s) > self.n_items:
                raise InstanceError(f"set {sorted(s)} has items outside 1..{self.n_items}")
        object.__setattr__(self, "sets", sets)


def generate_hitting_set_instance(spec: HittingSetSpec) -> Instance:
    """One scenario per set; item j costs nothing in scenario l iff j is in set l.

    Each matrix is (n+1) x n: diagonal entry j is 0 when item j+1 belongs to
    the set and 1 otherwise, and the last row is all ones.  The objective sums
    the first n doses and the single constraint asks the last dose to be >= 1.
    """
    n = spec.n_items
    scenarios = []
    for l, s in enumerate(spec.sets):
        D = np.zeros((n + 1, n))
        for j in range(n):
            D[j, j] = 0.0 if (j + 1) in s else 1.0
        D[n, :] = 1.0
        label = "set=" + ",".join(str(i) for i in sorted(s))
        scenarios.append(Scenario(l, sp.csr_matrix(D), label))
    structures = {"items": np.arange(n), "coverage": np.array([n])}
    meta = {
        "family": "hitting_set",
        "spec": {"n_items": n, "sets": [sorted(s) for s in spec.sets], "K_query": spec.K_query},
    }
    return Instance(
        tuple(scenarios),
        structures,
        ObjectiveSpec("items", ObjectiveKind.SUM_DOSE),
        (ConstraintSpec("coverage", ConstraintKind.MIN_DOSE, 1.0),),
        None,
        meta,
    )


def hitting_set_spec_from_metadata(instance: Instance) -> HittingSetSpec:
    d = instance.metadata["spec"]
    return HittingSetSpec(d["n_items"], tuple(frozenset(s) for s in d["sets"]), d["K_query"])


def hitting_set_oracle(spec: HittingSetSpec, max_items: int = 20) -> bool:
    """Whether at most K_query items meet every set (exhaustive)."""
    n = spec.n_items
    if n > max_items:
        raise ValueError(f"exhaustive check refused for n={n} > {max_items}")
    for k in range(0, min(spec.K_query, n) + 1):
        for chosen in itertools.combinations(range(1, n + 1), k):
            c = set(chosen)
            if all(s & c for s in spec.sets):
                return True
    return False


def proof_plans(spec: HittingSetSpec) -> list[np.ndarray]:
    """Unit weight vectors, one per item: the plans used in the reduction argument."""
    return [np.eye(spec.n_items)[j] for j in range(spec.n_items)]
