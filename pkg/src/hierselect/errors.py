"""Exception hierarchy. The CLI maps each family to an exit code."""


class HierSelectError(Exception):
    exit_code = 1


class ConfigError(HierSelectError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2


class SchemaError(ConfigError):
    """Input file does not match the expected column schema."""


class DimensionError(SchemaError):
    """Ragged or inconsistent feature dimension."""


class RoleError(SchemaError):
    """Dataset contents are incompatible with its calibration/test role."""


class MissingWeightError(SchemaError):
    """Weighted procedure called without usable group weights."""


class BudgetExceededError(ConfigError):
    """Full enumeration would exceed the configured budget."""


class GuardError(HierSelectError):
    """A method precondition (e.g. score monotonicity) does not hold."""

    exit_code = 3


class InvariantError(HierSelectError, AssertionError):
    """An internal postcondition was violated. Indicates a bug."""

    exit_code = 4
