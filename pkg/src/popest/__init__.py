"""Population size estimation from aggregated administrative counts.

Fits power-link count-regression models (mu = N^(x'alpha) * (n/N)^(z'beta))
to per-stratum apprehension counts with Poisson/NB2 families and optional
zero or zero-one truncation, and quantifies uncertainty with a plug-in
interval and a parametric bootstrap.
"""

from .dataio import Dataset, StratumRecord, apply_model_conditions, pad_empty_domain, parse_csv
from .distributions import CountFamily, EtaPoint, Family, Truncation, log_pmf, sample
from .meanmodel import DesignSpec, ModelSpec, ParamVector
from .mle import FittedModel, fit, information_criteria, linearized_init, xi_decompose
from .uncertainty import (
    BootstrapResult,
    parametric_bootstrap,
    percentile_interval,
    plugin_interval,
    spin_interval,
)
from .diagnostics import anscombe_residual, diagnostics_report, linearized_check
from .simulation import SimDesign, run_simulation, synthetic_population

__all__ = [
    "BootstrapResult",
    "CountFamily",
    "Dataset",
    "DesignSpec",
    "EtaPoint",
    "Family",
    "FittedModel",
    "ModelSpec",
    "ParamVector",
    "SimDesign",
    "StratumRecord",
    "Truncation",
    "anscombe_residual",
    "apply_model_conditions",
    "diagnostics_report",
    "fit",
    "information_criteria",
    "linearized_check",
    "linearized_init",
    "log_pmf",
    "pad_empty_domain",
    "parametric_bootstrap",
    "parse_csv",
    "percentile_interval",
    "plugin_interval",
    "run_simulation",
    "sample",
    "spin_interval",
    "synthetic_population",
    "xi_decompose",
]
