"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An array has the wrong shape along some axis."""


class ConfigurationError(ValueError):
    """A parameter or configuration value is invalid."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class FormatError(ValueError):
    """A file does not follow the expected format."""


class IntegrityError(FormatError):
    """A file is truncated or otherwise corrupt."""


class ConfigMismatchError(ValueError):
    """A stored configuration disagrees with the requested one."""
