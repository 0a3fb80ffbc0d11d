"""Conformal e-value and p-value constructions."""

from .boost import boost_evalues, external_uniform, internal_uniform
from .core import (
    EValueTable,
    StepFunction,
    SubsampleDraw,
    check_level,
    draw_subsample,
    fdp_curve,
    leave_one_out_thresholds,
    mean_tables,
    stopping_threshold,
)
from .group import group_general_evalues, group_global_evalues, mean_prediction_group_score
from .hierarchical import hierarchical_evalues, hierarchical_pvalues, hierarchical_thresholds
from .io import write_table_csv
from .ite import ite_hierarchical_evalues, ite_pvalues, ite_subsampling_evalues
from .subsampling import (
    DEFAULT_BUDGET,
    averaged_evalues,
    derandomized_evalues,
    pbh_select,
    pbh_threshold,
    subsampling_evalues,
    subsampling_pvalues,
)
from .weighted import weighted_subsampling_evalues

__all__ = [name for name in dir() if not name.startswith("_")]
