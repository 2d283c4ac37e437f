"""Exception hierarchy shared by all modules."""


class PositioningError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInputError(PositioningError, ValueError):
    """Input is empty, all-zero, or otherwise unusable."""


class InsufficientAnchors(PositioningError):
    """Fewer than three usable ranging references for lateration."""


class InsufficientNeighbors(PositioningError):
    """Not enough neighbor devices with a fresh stand-alone estimate."""


class NumericalFailure(PositioningError, ArithmeticError):
    """A non-finite value appeared inside an iterative solver."""


class ModelIntegrityError(PositioningError):
    """MLP weights or ranges do not chain into a valid 6 -> ... -> 1 network."""


class ModelFormatError(PositioningError):
    """A model file is truncated, malformed, or has an unsupported version."""


class TrainingDataError(PositioningError, ValueError):
    """Training data cannot be normalized (empty set or constant feature)."""


class ScenarioError(PositioningError, ValueError):
    """Scenario document violates its schema; the message names the field."""
