"""Forward simulation, discrete adjoints, and bilinear optimal control of a
2D chemo-repulsion reaction-diffusion system with nonlinear signal
production."""

from .adjoint import (
    AdjointTrajectory,
    TangentSource,
    duality_residual,
    solve_adjoint,
    solve_tangent,
)
from .diagnostics import (
    ConservationReport,
    conservation_report,
    energy_series,
    mass_series,
    negativity_report,
    v_balance_residuals,
)
from .forward import (
    Scenario,
    SolverError,
    Trajectory,
    analytic_constant_solution,
    as_control,
    control_inner,
    control_norm,
    solve_forward,
    step_state,
    zero_control,
)
from .grid import (
    Grid2D,
    build_grid,
    chemotactic_divergence,
    integrate,
    laplacian_neumann,
    masked_l2_sq,
)
from .optimize import (
    CostBreakdown,
    OptimizationReport,
    control_gradient,
    evaluate_cost,
    optimize,
    project_control,
    stationarity_residual,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointTrajectory",
    "ConservationReport",
    "CostBreakdown",
    "Grid2D",
    "OptimizationReport",
    "Scenario",
    "SolverError",
    "TangentSource",
    "Trajectory",
    "analytic_constant_solution",
    "as_control",
    "build_grid",
    "chemotactic_divergence",
    "conservation_report",
    "control_gradient",
    "control_inner",
    "control_norm",
    "duality_residual",
    "energy_series",
    "evaluate_cost",
    "integrate",
    "laplacian_neumann",
    "masked_l2_sq",
    "mass_series",
    "negativity_report",
    "optimize",
    "project_control",
    "solve_adjoint",
    "solve_forward",
    "solve_tangent",
    "stationarity_residual",
    "step_state",
    "v_balance_residuals",
    "zero_control",
]
