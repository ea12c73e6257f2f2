"""Exception types shared across the package."""


class BetasegError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(BetasegError):
    """An array argument has the wrong shape or incompatible dimensions."""


class ConfigError(BetasegError):
    """A configuration object or file is invalid."""


class FormatError(BetasegError):
    """An on-disk artifact (checkpoint, dataset) is corrupt or mismatched."""
