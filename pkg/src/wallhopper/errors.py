"""Exception types shared across the package."""


class WallhopperError(Exception):
    """Base class for package errors."""


class ConfigError(WallhopperError):
    """Invalid configuration value or scenario file."""


class ParseError(WallhopperError):
    """Malformed input file (grid files, scenario files)."""


class DomainError(WallhopperError):
    """Query or state outside the mathematically valid domain."""


class RolloutError(WallhopperError):
    """Integration left the valid state domain.

    Carries the index of the first knot interval where the failure occurred.
    """

    def __init__(self, message: str, knot: int):
        super().__init__(message)
        self.knot = knot
