"""Dynamic stochastic portfolio optimization by expected terminal-utility
maximization, with CVaR-deviation-based performance ratios.

Pipeline: tabulate the parametric-QP value function over phi, solve the
Riccati-transformed evolution equation with a semi-implicit finite-volume
scheme, reconstruct the value function, simulate the optimally controlled
wealth process, and score the terminal-wealth sample.
"""

__version__ = "0.1.0"

from .market import ControlledProcessParams, MarketSpec, example1_process, load_market_csv
from .pde import BCKind, GridSpec, PhiField, solve, step, terminal_condition
from .qp import AlphaTable, QPSettings, build_alpha_table, eval_alpha, solve_qp
from .risk import RiskReport, report, var_cvar
from .simulate import SimConfig, SimulationBatch, antithetic_pairs, simulate
from .utility import UtilitySpec, risk_aversion_profile, utility_prime, utility_value
from .value import ValueField, check_hjb_residual, reconstruct

__all__ = [
    "__version__",
    "MarketSpec", "ControlledProcessParams", "load_market_csv", "example1_process",
    "QPSettings", "AlphaTable", "solve_qp", "build_alpha_table", "eval_alpha",
    "UtilitySpec", "utility_value", "utility_prime", "risk_aversion_profile",
    "GridSpec", "BCKind", "PhiField", "terminal_condition", "step", "solve",
    "ValueField", "reconstruct", "check_hjb_residual",
    "SimConfig", "SimulationBatch", "simulate", "antithetic_pairs",
    "RiskReport", "var_cvar", "report",
]
