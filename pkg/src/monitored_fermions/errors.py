"""Exception hierarchy shared by the engines, observables and fitting layer."""


class MonitoredFermionsError(Exception):
    """Base class for every error raised by this package."""


class NumericalBreakdown(MonitoredFermionsError):
    """A re-orthonormalisation or normalisation failed (usually dt too large)."""


class MismatchedGrids(MonitoredFermionsError):
    pass


class EmptyWindow(MonitoredFermionsError):
    pass


class OddSize(MonitoredFermionsError):
    pass


class SizeLimit(MonitoredFermionsError):
    pass


class NoConvergence(MonitoredFermionsError):
    pass


class SpectrumOutOfRange(MonitoredFermionsError):
    pass


class DegenerateDenominator(MonitoredFermionsError):
    pass


class SingularResolvent(MonitoredFermionsError):
    pass


class DegenerateData(MonitoredFermionsError):
    pass


class InsufficientPoints(MonitoredFermionsError):
    pass


class ConfigError(MonitoredFermionsError):
    pass


class MissingData(MonitoredFermionsError):
    pass


class CorruptCheckpoint(MonitoredFermionsError):
    pass


class EngineError(MonitoredFermionsError):
    """Wraps a failure inside one sweep point, carrying the point context."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point

    def __str__(self):
        msg = super().__str__()
        return msg if self.point is None else f"{msg} (point {self.point})"
