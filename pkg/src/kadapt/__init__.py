"""K-adaptable robust treatment planning: precompute K plans, use the best one per scenario."""

from .assign import (
    AssignmentResult,
    DistanceMatrix,
    InfeasibleThresholdError,
    KMedoidsResult,
    UnassignableScenarioError,
    assign_fixed_selection,
    build_distance_matrix,
    solve_assignment_pareto_avg,
    solve_assignment_worst_case,
    solve_k_medoids,
)
from .bench import BenchReport, MethodReport, RunConfig, compute_metrics, parse_csv, run_benchmark, verify, write_csv
from .core import (
    EPS_FEAS,
    EPS_VAL,
    ConstraintKind,
    ConstraintSpec,
    DimensionMismatchError,
    Instance,
    InstanceError,
    KAdaptError,
    ObjectiveKind,
    ObjectiveSpec,
    PartitionError,
    PhaseTag,
    PlanSolution,
    Scenario,
    ValueMatrix,
    build_value_matrix,
    canonicalize_partition,
    evaluate_plan,
    extend_value_matrix,
)
from .heuristics import (
    HeuristicRun,
    KRecord,
    Method,
    Order,
    PlanPool,
    PoolMode,
    TerminationGuardError,
    run_aosg,
    run_generation_phase,
    run_kmedoids_pipeline,
    run_lsp,
    run_main,
    run_method,
    run_redistribution_phase,
)
from .instgen import (
    HittingSetSpec,
    OarSpec,
    PhantomParams,
    generate_hitting_set_instance,
    generate_phantom_instance,
    hitting_set_oracle,
)
from .io import load_instance, load_value_matrix, save_instance, save_value_matrix
from .lp import (
    EPS_OPT,
    LpInternalError,
    LpNumericalFailure,
    LpSolution,
    LpStatus,
    RobustSubproblem,
    solve_robust_subproblem,
    solve_single_scenario,
    write_lp_file,
)

__version__ = "0.1.0"
