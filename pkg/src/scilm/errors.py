"""Exception hierarchy shared across the package."""


class ScilmError(Exception):
    """Base class for every error raised by scilm."""


class ContractViolation(ScilmError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class DegenerateInputError(ContractViolation):
    """A vector norm fell below the degeneracy threshold."""


class DatasetError(ScilmError):
    """A dataset directory is missing files or holds inconsistent content."""


class ConfigurationError(ScilmError, ValueError):
    """A configuration value or file is invalid."""


class NumericalError(ScilmError, FloatingPointError):
    """Training produced a non-finite value."""


class EvaluationError(ScilmError):
    """Evaluation cannot proceed (e.g. an empty test split)."""
