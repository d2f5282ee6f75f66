"""Day-ahead market clearing and profit sharing for community microgrids.

The pipeline: load or synthesize a :class:`Scenario`, clear the internal
market (:func:`clear_market` — welfare-optimal dispatch plus marginal
prices from the LP duals), compute each entity's stand-alone benchmark
(:func:`standalone_profits`), split the community profit so the worst-off
entity improves as much as possible (:func:`solve_sharing`), and audit the
whole result against the model's optimality conditions (:func:`verify_all`).
The :mod:`commarket.cli` module wraps the pipeline for batch runs.
"""
from __future__ import annotations

from .lp import (
    CertificateReport,
    LinearProgram,
    LpSolution,
    check_certificate,
    solve,
)
from .market import (
    InfeasibleError,
    MarketOutcome,
    ProfitSplit,
    StandaloneProfits,
    build_individual,
    build_lower_level,
    clear_market,
    standalone_profits,
)
from .scenario import (
    Scenario,
    ScenarioError,
    ScenarioFormatError,
    ScenarioValidationError,
    load_scenario,
    scenario_from_dict,
    synthesize_scenario,
)
from .sharing import (
    SharingInfeasibleError,
    SharingOutcome,
    energy_profit,
    reserve_contributions,
    solve_sharing,
)
from .verify import CheckResult, VerificationReport, verify_all

__version__ = "0.1.0"

__all__ = [
    "CertificateReport",
    "CheckResult",
    "InfeasibleError",
    "LinearProgram",
    "LpSolution",
    "MarketOutcome",
    "ProfitSplit",
    "Scenario",
    "ScenarioError",
    "ScenarioFormatError",
    "ScenarioValidationError",
    "SharingInfeasibleError",
    "SharingOutcome",
    "StandaloneProfits",
    "VerificationReport",
    "build_individual",
    "build_lower_level",
    "check_certificate",
    "clear_market",
    "energy_profit",
    "load_scenario",
    "reserve_contributions",
    "scenario_from_dict",
    "solve",
    "solve_sharing",
    "standalone_profits",
    "synthesize_scenario",
    "verify_all",
    "__version__",
]
