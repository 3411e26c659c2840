"""Exception hierarchy shared across the package."""


class OnlcError(Exception):
    """Base class for all package errors."""


class DomainError(OnlcError):
    """An input lies outside the mathematical domain of an operation."""


class IngestError(OnlcError):
    """CSV ingestion failed. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ImputeError(OnlcError):
    """A required field has no observed value anywhere in the series."""


class TrainingError(OnlcError):
    """Model training failed (empty dataset, divergence, incompatibility)."""


class ConfigError(OnlcError):
    """A configuration value is missing or inconsistent."""


class CoverageError(OnlcError):
    """A value fell outside the covered domain of a penalty lookup."""


class FitError(OnlcError):
    """A penalty lookup is too degenerate to fit a linear approximation."""


class InfeasiblePlanError(OnlcError):
    """Meal-plan targets cannot be met; .report names the binding constraint."""

    def __init__(self, report: str):
        super().__init__(report)
        self.report = report


class NotFoundError(OnlcError):
    """Referenced entity does not exist."""


class ConflictError(OnlcError):
    """State transition conflicts with the current status (duplicate, re-score)."""


class PreconditionError(OnlcError):
    """Required artifacts (model, predictions) do not exist yet."""
