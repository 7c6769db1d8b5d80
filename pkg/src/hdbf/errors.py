"""Exception hierarchy shared by the statistics, generator and harness layers."""


class HDBFError(Exception):
    """Base class for all package errors."""


class TooFewObservationsError(HDBFError, ValueError):
    pass


class DegenerateCoordinateError(HDBFError, ValueError):
    """A studentizing denominator was non-positive or non-finite.

    ``location`` carries the offending indices, e.g. ``{"k": 3, "i": 0, "j": 4,
    "s": 1, "t": 2}``, so the caller can see exactly which term blew up.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = dict(location or {})


class NonPositiveVarianceError(HDBFError, ValueError):
    pass


class InvalidSpecError(HDBFError, ValueError):
    pass


class ConfigError(HDBFError, ValueError):
    pass
