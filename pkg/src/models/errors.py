from typing import Any, Optional


class GgdPottsError(Exception):
    """Base class for every failure raised by the deconvolution toolkit"""


class GridFormatError(GgdPottsError):
    """Malformed matrix/label file, bad dimensions or out-of-range labels"""


class InvalidParameterError(GgdPottsError, ValueError):
    """A distribution, operator or sampler parameter is outside its support"""


class DimensionMismatchError(GgdPottsError, ValueError):
    pass


class NumericFailure(GgdPottsError):
    """Non-finite energies, blown-up weights or zero denominators"""


class SamplerAborted(NumericFailure):
    """
    Raised when a Gibbs move fails irrecoverably.
    Carries the chain state at the time of failure so it can be dumped.
    """

    def __init__(self, message: str, state: Any = None, move: Optional[str] = None):
        super().__init__(message)
        self.state = state
        self.move = move


class ConvergenceError(NumericFailure):
    """An iterative solver diverged; the last iterate is kept for inspection"""

    def __init__(self, message: str, iterate: Any = None):
        super().__init__(message)
        self.iterate = iterate
