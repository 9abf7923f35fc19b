"""Exception hierarchy shared by every stage of the pipeline."""


class LifestyleError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LifestyleError, ValueError):
    """Invalid parameter or configuration value."""


class ParseError(LifestyleError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CompletenessError(LifestyleError, ValueError):
    """A household is missing hours or days."""

    def __init__(self, message, household_id=None):
        self.household_id = household_id
        super().__init__(message)


class DimensionError(LifestyleError, ValueError):
    """Array shapes do not agree."""


class DomainError(LifestyleError, ValueError):
    """Input outside the mathematical domain of an operation."""


class StageError(LifestyleError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")
