"""Conformal selection with false discovery rate control for hierarchical data."""

__version__ = "0.1.0"

from .data import Group, HierarchicalDataset, HypothesisId, Role, Unit, load_csv, split_groups, validate, write_csv
from .errors import (
    BudgetExceededError,
    ConfigError,
    DimensionError,
    GuardError,
    HierSelectError,
    InvariantError,
    MissingWeightError,
    RoleError,
    SchemaError,
)
from .scoring import (
    PredictionTable,
    RidgePredictor,
    ScoreFunction,
    ScoreSet,
    compute_ite_scores,
    compute_scores,
    constant_threshold,
    residual_score,
)
from .testing import RejectionSet, SelectionMetrics, bh, ebh, metrics, u_ebh
