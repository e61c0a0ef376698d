"""Nash-equilibrium network formation among K groups of agents."""

__version__ = "0.1.0"

from .best_response import (
    AgentSnapshot,
    SingularSystemError,
    closed_form_k2,
    hamiltonian,
    implicit_best_response,
)
from .fbode import (
    EquilibriumSolution,
    MeanFieldTrajectories,
    SolverDivergence,
    WeightProfile,
    aggregates,
    fixed_point_solve,
    solve_backward,
    solve_forward,
)
from .model import GroupParams, ModelParams, SolverConfig, TimeGrid, ValidationError, preset, validate
from .montecarlo import PathSet, empirical_cost, simulate_paths
from .nash import CostBreakdown, DeviationReport, PerturbationFamily, deviation_check, evaluate_cost, variance_trajectory
