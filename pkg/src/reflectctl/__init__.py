"""Optimal control of reflected SDEs with recursive (GBSDE) costs.

Monte Carlo dynamic programming and a finite-difference HJB solver with a
nonlinear Neumann boundary condition, plus the harness that cross-checks them.
"""
from .domain import ConvexDomain, Region, classify, disk2, get_domain, interval01, inward_normal, project_to_closure
from .dpp import (
    MCConfig,
    ProblemSpec,
    SpaceMesh,
    ValueGrid,
    check_dpp_consistency,
    compute_value_dpp,
    evaluate_cost,
)
from .gbsde import BasisSpec, RecursiveCost, backward_semigroup, direct_expectation_oracle, solve_gbsde
from .hjb import FdGrid, compare_grids, hamiltonian, solve_hjb_fd
from .rsde import Coefficients, ControlPolicy, TimeGrid, k_moment, simulate_paths, sup_excursion_moment

__all__ = [
    "BasisSpec", "Coefficients", "ControlPolicy", "ConvexDomain", "FdGrid", "MCConfig", "ProblemSpec",
    "RecursiveCost", "Region", "SpaceMesh", "TimeGrid", "ValueGrid", "backward_semigroup",
    "check_dpp_consistency", "classify", "compare_grids", "compute_value_dpp", "direct_expectation_oracle",
    "disk2", "evaluate_cost", "get_domain", "hamiltonian", "interval01", "inward_normal", "k_moment",
    "project_to_closure", "simulate_paths", "solve_gbsde", "solve_hjb_fd", "sup_excursion_moment",
]
