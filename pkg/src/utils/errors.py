"""
Exception types for the Shift Learning Lab.
"""


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigurationError(LabError, ValueError):
    """A knob, experiment file or quadrature setting is out of range."""


class UnsupportedOrderError(LabError, ValueError):
    """Hermite order above the supported recurrence cap."""


class UnsupportedLinkError(LabError, ValueError):
    """Unknown link name, or a link lacking a required derivative."""


class DegenerateShiftError(LabError, ValueError):
    """A shift is too close to +-1, or projection values coincide."""


class InsufficientWidthError(LabError, RuntimeError):
    """The bias pool does not cover every gap interval."""


class PreconditionError(LabError, ValueError):
    """An object is not in the state an operation requires."""


class NumericalConsistencyWarning(UserWarning):
    """Two numerical routes to the same quantity disagree."""
