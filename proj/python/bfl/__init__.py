"""Posterior aggregation, projection and federated simulation (C++ core)."""

from ._core import (
    ConfigError,
    ContractError,
    DegenerateSample,
    DiagGaussian,
    aggregate,
    compare_aggregations,
    default_config,
    divergence,
    hessian_of,
    posterior_from_hessian,
    project,
    run_experiment,
    validate_geometry,
    wilcoxon,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateSample",
    "DiagGaussian",
    "aggregate",
    "compare_aggregations",
    "default_config",
    "divergence",
    "hessian_of",
    "posterior_from_hessian",
    "project",
    "run_experiment",
    "validate_geometry",
    "wilcoxon",
]
