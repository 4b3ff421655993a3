"""Exception hierarchy shared across the package."""


class TerrafeatError(Exception):
    """Base class for package-specific errors."""


class FileFormatError(TerrafeatError):
    """A file could not be parsed or written in the requested format."""


class NumericalError(TerrafeatError):
    """A numerical procedure failed (degenerate input, no consensus, ...)."""
