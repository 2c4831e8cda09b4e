"""Chattering-based Hamiltonian optimal control.

A continuous optimal control problem is relaxed into a sequence of
per-interval linear programs over chattering measures; state and costate are
propagated across intervals, and the unknown initial costate is recovered by
a variation-of-extremals shooting loop.
"""

from .chattering import (
    ChatteringMeasure,
    ChatteringSignal,
    DimensionMismatch,
    EmptyGrid,
    GridParams,
    InfeasibleLevels,
    LevelGrid,
    control_from_measure,
    generate_levels,
    level_bound_search,
    realize_signal,
    signal_time_average,
    solve_measure_lp,
)
from .model import (
    ControlProblem,
    HamiltonianContext,
    NonFiniteEvaluation,
    eval_hamiltonian,
    eval_hamiltonian_batch,
    grad_h_costate,
    grad_h_state,
    terminal_costate,
    terminal_hessian,
)
from .problems import (
    ConfigError,
    CustomerRecord,
    DemandModel,
    ItemRecord,
    SupplierRecord,
    build_lqr,
    build_supply_chain,
    lqr_analytic_solution,
    lqr_hamiltonian_flow,
    market_step_oracle,
    synthetic_demand,
)
from .propagation import (
    TimePartition,
    Trajectory,
    TrajectoryPoint,
    accumulate_cost,
    load_replay_file,
    propagate_forward,
    replay_measurement_source,
    step_costate,
    step_state,
)
from .shooting import (
    SensitivityEstimate,
    ShootingConfig,
    ShootingResult,
    SingularCorrection,
    finite_diff_sensitivities,
    solve,
    update_initial_costate,
)

__version__ = "0.1.0"

__all__ = [
    "ChatteringMeasure",
    "ChatteringSignal",
    "ConfigError",
    "ControlProblem",
    "CustomerRecord",
    "DemandModel",
    "DimensionMismatch",
    "EmptyGrid",
    "GridParams",
    "HamiltonianContext",
    "InfeasibleLevels",
    "ItemRecord",
    "LevelGrid",
    "NonFiniteEvaluation",
    "SensitivityEstimate",
    "ShootingConfig",
    "ShootingResult",
    "SingularCorrection",
    "SupplierRecord",
    "TimePartition",
    "Trajectory",
    "TrajectoryPoint",
    "accumulate_cost",
    "build_lqr",
    "build_supply_chain",
    "control_from_measure",
    "eval_hamiltonian",
    "eval_hamiltonian_batch",
    "finite_diff_sensitivities",
    "generate_levels",
    "grad_h_costate",
    "grad_h_state",
    "level_bound_search",
    "load_replay_file",
    "lqr_analytic_solution",
    "lqr_hamiltonian_flow",
    "market_step_oracle",
    "propagate_forward",
    "realize_signal",
    "replay_measurement_source",
    "signal_time_average",
    "solve",
    "solve_measure_lp",
    "step_costate",
    "step_state",
    "synthetic_demand",
    "terminal_costate",
    "terminal_hessian",
    "update_initial_costate",
]
