"""Exception types shared across the package."""


class StcrError(Exception):
    """Base class for package-specific failures."""


class DimensionError(StcrError, ValueError):
    """Shapes or axes of an operation's inputs do not line up."""


class NumericError(StcrError, ArithmeticError):
    """Non-finite or otherwise unusable numeric input."""


class FormatError(StcrError, ValueError):
    """A binary or text artifact on disk does not match its format."""


class ConfigError(StcrError, ValueError):
    """A configuration document or value is invalid."""
