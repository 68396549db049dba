"""
errors.py: Exception hierarchy shared by the library and the command line.

Every exception carries the process exit code the CLI should use when it
escapes to the top level.
"""

from typing import Any, Dict, Optional


class IfmImageError(Exception):
    """Base class for all ifmimage failures (runtime failure, exit code 4)."""

    exit_code: int = 4


class UsageError(IfmImageError):
    """Invalid flag combination on the command line."""

    exit_code = 2


class ConfigError(IfmImageError):
    """Unreadable, malformed or invalid configuration."""

    exit_code = 3


class InvalidParameterError(IfmImageError, ValueError):
    """A physical parameter is outside its admissible range."""


class RasterParseError(IfmImageError):
    """A raster file could not be decoded as a grayscale image."""


class DimensionMismatchError(IfmImageError, ValueError):
    """Grids that must line up do not."""


class UndefinedVisibilityError(IfmImageError):
    """Visibility of a curve whose max + min is zero."""


class InfeasibleThresholdError(IfmImageError):
    """The two classes are closer than the requested separation."""


class ResourceLimitError(IfmImageError):
    """A request would exceed the configured memory budget."""


class FitError(IfmImageError):
    """A fit did not converge or the data cannot constrain the model."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = diagnostics or {}
