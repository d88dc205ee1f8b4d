"""Exception types shared across the package."""


class PPMNError(Exception):
    """Base class for all package errors."""


class ShapeError(PPMNError, ValueError):
    """Tensor extents are inconsistent with an operation's contract."""


class GraphError(PPMNError, ValueError):
    """Malformed layer graph: cycle, unbound input or missing cache."""


class ConfigError(PPMNError, ValueError):
    """Invalid or unknown configuration value."""


class DatasetError(PPMNError, ValueError):
    """Malformed dataset layout or image file."""


class NumericalError(PPMNError, ArithmeticError):
    """NaN/Inf loss, divergence or failed gradient check."""
