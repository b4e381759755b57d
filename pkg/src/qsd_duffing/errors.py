"""Exception types raised by the simulation library."""


class QSDError(Exception):
    """Base class for simulation errors."""


class DimensionMismatch(QSDError, ValueError):
    pass


class TruncationTooSmall(QSDError):
    """The truncated Fock basis cannot represent the requested state."""


class NonFiniteState(QSDError, FloatingPointError):
    """An amplitude became NaN or infinite (dt too large or truncation overflow)."""


class ZeroSeparation(QSDError):
    """A trajectory pair has collapsed onto a single state; it cannot be rescaled."""


class InsufficientData(QSDError):
    """Not enough checkpoints to classify a Lyapunov series."""
