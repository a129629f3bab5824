"""Linear-programming power allocation and the spectral-efficiency trade-off."""
from .power import (
    DEFAULT_EPS,
    EtaGrid,
    FadingModel,
    OptimizationResult,
    OptimizerSettings,
    TradeoffPoint,
    build_power_lp,
    fading_outer_bound,
    geometric_power_grid,
    max_rate_at_ebno,
    min_ebno_for_rate,
    near_far_gain,
    optimize_profile,
    single_group_feasible,
    tradeoff_sweep,
)
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, LpSolution, simplex_solve

__all__ = [
    "DEFAULT_EPS",
    "EtaGrid",
    "FadingModel",
    "INFEASIBLE",
    "LpProblem",
    "LpSolution",
    "OPTIMAL",
    "OptimizationResult",
    "OptimizerSettings",
    "TradeoffPoint",
    "UNBOUNDED",
    "build_power_lp",
    "fading_outer_bound",
    "geometric_power_grid",
    "max_rate_at_ebno",
    "min_ebno_for_rate",
    "near_far_gain",
    "optimize_profile",
    "simplex_solve",
    "single_group_feasible",
    "tradeoff_sweep",
]
