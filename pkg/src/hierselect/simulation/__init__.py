"""Synthetic data, Monte Carlo experiments and validity oracles."""

from .dgp import DgpConfig, IteConfig, ShiftConfig, generate, generate_ite, generate_shifted, mean_outcome
from .experiment import (
    ALPHA_GRID,
    METHODS,
    AggregateResult,
    ExperimentSpec,
    desk_dgp,
    full_scale_dgp,
    results_csv,
    run_experiment,
)
from .oracles import (
    VALIDITY_SUITES,
    SmallInstance,
    ValidityReport,
    oracle_bh,
    oracle_ebh,
    oracle_threshold,
    validity_check,
)
