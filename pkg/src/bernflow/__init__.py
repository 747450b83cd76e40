"""Grid simulator for the volume-plus-capacity gradient flow of a set around a fixed source."""

from bernflow.errors import (
    BernflowError,
    ConfigurationError,
    ContainmentError,
    ContractError,
    DegenerateSetError,
    DomainError,
    SolverError,
)
from bernflow.flow import (
    FlowConfig,
    FlowRun,
    FlowState,
    comparison_experiment,
    monotonicity_certificate,
    refinement_study,
    run_flow,
    step,
)
from bernflow.grid import (
    Annulus,
    Ball,
    Difference,
    GridSpec,
    RegionMask,
    ScalarField,
    Union,
    equivalent_radius,
    erode,
    hausdorff_distance,
    make_grid,
    rasterize_shape,
    signed_distance,
    volume,
)
from bernflow.jh import (
    MinimizerParams,
    MinimizerResult,
    PenaltyField,
    evaluate_jh,
    free_boundary_residual,
    minimize_jh,
    penalty_field,
)
from bernflow.potential import (
    PotentialSolution,
    SolverParams,
    boundary_gradient,
    capacity_refinement_probe,
    capacity_value,
    energy,
    solve_potential,
)
from bernflow.radial import (
    RadialParams,
    equilibrium_radius,
    jh_radial,
    non_blowup_constant,
    radial_boundary_gradient,
    radial_capacity,
    radial_flow_ode,
    stationary_points,
)

__version__ = "0.1.0"

__all__ = [
    "BernflowError",
    "ConfigurationError",
    "ContainmentError",
    "ContractError",
    "DegenerateSetError",
    "DomainError",
    "SolverError",
    "FlowConfig",
    "FlowRun",
    "FlowState",
    "comparison_experiment",
    "monotonicity_certificate",
    "refinement_study",
    "run_flow",
    "step",
    "Annulus",
    "Ball",
    "Difference",
    "GridSpec",
    "RegionMask",
    "ScalarField",
    "Union",
    "equivalent_radius",
    "erode",
    "hausdorff_distance",
    "make_grid",
    "rasterize_shape",
    "signed_distance",
    "volume",
    "MinimizerParams",
    "MinimizerResult",
    "PenaltyField",
    "evaluate_jh",
    "free_boundary_residual",
    "minimize_jh",
    "penalty_field",
    "PotentialSolution",
    "SolverParams",
    "boundary_gradient",
    "capacity_refinement_probe",
    "capacity_value",
    "energy",
    "solve_potential",
    "RadialParams",
    "equilibrium_radius",
    "jh_radial",
    "non_blowup_constant",
    "radial_boundary_gradient",
    "radial_capacity",
    "radial_flow_ode",
    "stationary_points",
]
