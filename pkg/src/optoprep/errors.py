"""Exception hierarchy.

Two families exist so the command line can map failures onto exit codes:
configuration problems (bad dimensions, impossible schedules, malformed
config files) and numerical failures (truncation too small, integrator
breakdown, positivity loss).
"""


class OptoprepError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(OptoprepError, ValueError):
    """Invalid user input: parameters, dimensions, schedules, config files."""


class DimensionError(ConfigError):
    pass


class ProtocolError(ConfigError):
    pass


class NumericalError(OptoprepError, RuntimeError):
    """A computation could not be carried out to the requested accuracy."""


class TruncationError(NumericalError):
    pass


class IntegrationError(NumericalError):
    pass


class InstabilityError(NumericalError):
    pass


class PerturbativeRegimeError(NumericalError):
    pass


class GridError(NumericalError):
    pass
