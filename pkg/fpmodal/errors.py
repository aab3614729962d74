"""Exception hierarchy shared by every fpmodal module."""


class FPModalError(Exception):
    """Base class for all fpmodal errors."""


class DomainError(FPModalError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(FPModalError, ValueError):
    """Inconsistent configuration; ``field`` names the offending setting."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(FPModalError, ValueError):
    """Malformed or unusable measurement data."""


class ResolutionError(DataError):
    """Too few fringes in the band for a resolved Fourier analysis."""


class GratingGeometryError(DomainError):
    """The grating equation has no real solution for the requested setting."""


class CalibrationFitError(FPModalError, RuntimeError):
    """A calibration fit did not converge.

    Args:
        message (str): What went wrong
        best_params: Best parameter set found before giving up
        diagnostic (str): Solver message
    """

    def __init__(self, message, best_params=None, diagnostic=""):
        super().__init__(message)
        self.best_params = best_params
        self.diagnostic = diagnostic


class RankDeficiencyError(CalibrationFitError):
    """The observation set cannot constrain the free parameters."""


class UnderdeterminedFitError(FPModalError, ValueError):
    """Too few distinct waveguide lengths to separate R from alpha."""


class UncorrectableBiasError(FPModalError, RuntimeError):
    """Instrument resolution too poor to estimate the loss-ratio bias."""
