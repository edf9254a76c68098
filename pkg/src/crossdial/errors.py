"""Shared exception types."""


class ParseError(ValueError):
    """A malformed record or line in an input file."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class ConfigError(ValueError):
    """An invalid configuration value."""


class DegenerateInputError(ValueError):
    """Input that is empty or collapses to nothing after filtering."""


class DoubleTagError(ValueError):
    """A language tag was attached to an already-tagged sequence."""


class ShapeMismatchError(ValueError):
    """Operands with incompatible dimensions."""


class CompatibilityError(ValueError):
    """A checkpoint that cannot be loaded into the current model/vocabulary."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss term."""

    def __init__(self, message, breakdown=None):
        self.breakdown = breakdown
        super().__init__(message)
