"""Lifetime estimation for superposed renewal processes with masked failure causes."""

from ._backend import BACKEND
from .data import EventHistory, Fleet, FleetValidationError, parse_fleet, read_fleet, write_fleet
from .distributions import Family, LifetimeModel, expected_lifetime, moment_match, reliability
from .em import EmConfig, FitReport, run_em
from .enumeration import BudgetExceededError, EnumerationBudget, exact_log_likelihood, exact_mle
from .sim import Scenario, generate_fleet, mae

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EventHistory",
    "Fleet",
    "FleetValidationError",
    "parse_fleet",
    "read_fleet",
    "write_fleet",
    "Family",
    "LifetimeModel",
    "expected_lifetime",
    "moment_match",
    "reliability",
    "EmConfig",
    "FitReport",
    "run_em",
    "BudgetExceededError",
    "EnumerationBudget",
    "exact_log_likelihood",
    "exact_mle",
    "Scenario",
    "generate_fleet",
    "mae",
]
