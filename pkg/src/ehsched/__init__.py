"""Optimal and baseline slot/power scheduling for energy-harvesting transmitters."""

from .gbd import GbdTrace, PolicyResult, run_gbd
from .harness import ExperimentSpec, ResultsTable, run_experiment
from .instance import CSI, ProblemInstance, ScenarioConfig, default_scenario, load_instance, sample_instance
from .master import BendersCut, MasterProblem, build_cut, solve_master
from .policies import exhaustive_oracle, myopic_fullduplex, myopic_zhang, solve_relaxed, suboptimal_policy
from .primal import PrimalSolution, SolverError, solve_primal
from .rates import RateReport, rate_report

__all__ = [
    "CSI",
    "BendersCut",
    "ExperimentSpec",
    "GbdTrace",
    "MasterProblem",
    "PolicyResult",
    "PrimalSolution",
    "ProblemInstance",
    "RateReport",
    "ResultsTable",
    "ScenarioConfig",
    "SolverError",
    "build_cut",
    "default_scenario",
    "exhaustive_oracle",
    "load_instance",
    "myopic_fullduplex",
    "myopic_zhang",
    "rate_report",
    "run_experiment",
    "run_gbd",
    "sample_instance",
    "solve_master",
    "solve_primal",
    "solve_relaxed",
    "suboptimal_policy",
]
