"""Exception types shared across the package.

The CLI maps these onto exit codes: image problems exit 2, configuration or
weight-archive problems exit 3, bad layer/head/register indices exit 4.
"""


class FalconError(Exception):
    """Base class for all package errors."""


class ShapeError(FalconError):
    """Tensor dimensions are inconsistent with the requested operation."""


class NumericError(FalconError):
    """Non-finite values where finite ones are required."""


class ConfigError(FalconError):
    """Invalid configuration, or weights incompatible with a configuration."""


class StateError(FalconError):
    """Pipeline state mismatch (e.g. tiles presented at different layers)."""


class BoundsError(FalconError):
    """Layer, head, or register index outside the valid range."""


class ImageError(FalconError):
    """Malformed, truncated, or unreadable image file."""


class ArchiveError(FalconError):
    """Malformed or unreadable tensor archive."""
