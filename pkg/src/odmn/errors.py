"""Exception types raised across the package."""


class OdmnError(Exception):
    """Base class for all package errors."""


class DimensionError(OdmnError, ValueError):
    pass


class StateError(OdmnError, RuntimeError):
    pass


class NumericError(OdmnError, ArithmeticError):
    pass


class ConfigError(OdmnError, ValueError):
    pass


class IngestionError(OdmnError, ValueError):
    """Raised when a dataset file cannot be read; ``problems`` holds (line, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:20])
        more = "" if len(self.problems) <= 20 else f" (+{len(self.problems) - 20} more)"
        super().__init__(f"{len(self.problems)} malformed row(s): {lines}{more}")


class MetricError(OdmnError, ValueError):
    pass


class MismatchError(OdmnError, ValueError):
    """Checkpoint or dataset hashes disagree."""
