class ConfigError(ValueError):
    """Invalid configuration: bad option value, missing column, missing file."""


class ShapeError(ValueError):
    """Array or tensor shapes do not agree."""


class PreconditionError(ValueError):
    """Input violates an operation precondition."""
