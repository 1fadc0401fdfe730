"""Asymmetric zero-range processes in a quenched disordered environment.

Modules:

* :mod:`zrplab.model`: rate functions, kernels, disorder laws, environments, configurations.
* :mod:`zrplab.equilibria`: one-site laws, product invariant measures, local observables.
* :mod:`zrplab.flux`: annealed density, flux, Legendre transform, envelope, front speed.
* :mod:`zrplab.harris`: graphical construction, coupled replicas, source processes.
* :mod:`zrplab.observables`: currents, height functions, pathwise audits, MC comparison.
* :mod:`zrplab.jackson`: open nearest-neighbour network fed by two reservoirs.
* :mod:`zrplab.experiments` / :mod:`zrplab.scenario` / :mod:`zrplab.cli`: scenario runner.
"""
from .model import (
    INFINITY,
    Configuration,
    Environment,
    JumpKernel,
    LiminfWarning,
    ModelError,
    PointMixture,
    PowerLaw,
    RateFunction,
    build_environment_iid,
    build_environment_with_slow_sites,
    capped_linear_rate,
    constant_rate,
    normalize_rate_function,
    saturating_rate,
    slow_site_schedule,
)
from .equilibria import (
    LocalObservable,
    ProductMeasure,
    exact_expectation,
    mean_jump_rate,
    mean_occupancy_R,
    partition_function,
    sample_product_measure,
)
from .flux import FluxTables, LawSource, EnvironmentSource, build_flux_tables, critical_density
from .harris import HarrisEventStream, ReplicaSet, run_source_process
from .scenario import Scenario, default_scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "INFINITY",
    "Configuration",
    "Environment",
    "JumpKernel",
    "LiminfWarning",
    "ModelError",
    "PointMixture",
    "PowerLaw",
    "RateFunction",
    "build_environment_iid",
    "build_environment_with_slow_sites",
    "capped_linear_rate",
    "constant_rate",
    "normalize_rate_function",
    "saturating_rate",
    "slow_site_schedule",
    "LocalObservable",
    "ProductMeasure",
    "exact_expectation",
    "mean_jump_rate",
    "mean_occupancy_R",
    "partition_function",
    "sample_product_measure",
    "FluxTables",
    "LawSource",
    "EnvironmentSource",
    "build_flux_tables",
    "critical_density",
    "HarrisEventStream",
    "ReplicaSet",
    "run_source_process",
    "Scenario",
    "default_scenario",
    "load_scenario",
]
