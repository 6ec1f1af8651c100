"""Simulation of dynamic loop self-scheduling on heterogeneous master-worker platforms."""
from .dls import DlsConfig, Technique, parse_technique
from .perturbation import NO_PERTURBATION, Scenario, get_scenario, standard_scenarios
from .platform import Platform, load_platform
from .simcore import SimInput, SimOutcome, simulate
from .workload import DistributionSpec, Workload, generate_workload

__version__ = "0.1.0"

__all__ = [
    "DlsConfig", "Technique", "parse_technique", "NO_PERTURBATION", "Scenario", "get_scenario",
    "standard_scenarios", "Platform", "load_platform", "SimInput", "SimOutcome", "simulate",
    "DistributionSpec", "Workload", "generate_workload",
]
