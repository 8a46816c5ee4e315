"""Exception and warning classes shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"`{field}`")
        prefix = ": ".join([", ".join(parts)]) + ": " if parts else ""
        super().__init__(prefix + message)


class InputError(ValueError):
    """Malformed data passed to an operation."""


class ShapeError(InputError):
    """Array dimensions do not agree."""


class NumericError(FloatingPointError):
    """A non-finite value was produced or supplied."""


class TrainingError(RuntimeError):
    """A sequential run failed; ``partial`` holds the accuracy matrix so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DataWarning(UserWarning):
    """Data is usable but incomplete (missing classes, singleton classes, ...)."""
