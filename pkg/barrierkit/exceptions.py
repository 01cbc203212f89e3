""" Module defining shared exception classes. """

from typing import Any, Optional, Sequence


class BarrierKitException(Exception):
    """Top level barrierkit exception."""


class ConfigError(BarrierKitException, ValueError):
    """Exception indicating an invalid configuration or parameter file."""


class NumericalError(BarrierKitException):
    """Exception indicating a non-finite evaluation.

    Attributes:
        component (int, optional): Index of the first offending component.
    """

    def __init__(self, message: str, component: Optional[int] = None) -> None:
        super().__init__(message)
        self.component = component


class StepFailure(BarrierKitException):
    """The integrator step size underflowed.

    Attributes:
        t (float): Independent variable value where integration stopped.
        state (numpy.ndarray): Last accepted state.
    """

    def __init__(self, message: str, t: float = float("nan"), state: Any = None) -> None:
        super().__init__(message)
        self.t = t
        self.state = state


class SaddleNotFound(BarrierKitException):
    """A pointwise saddle problem could not be solved to tolerance."""

    def __init__(self, message: str, gap: float = float("nan")) -> None:
        super().__init__(message)
        self.gap = gap


class NoRoot(BarrierKitException):
    """No ultimate tangentiality point exists for a parameter value."""


class Degenerate(BarrierKitException):
    """The tangentiality equations are singular at a root."""


class NoBound(BarrierKitException):
    """The speed-domain bound has no real root."""


class HamiltonianDrift(BarrierKitException):
    """The Hamiltonian left its tolerance band along a barrier trajectory."""

    def __init__(self, message: str, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.residual = residual


class DenominatorSingular(BarrierKitException):
    """The reparameterizing coordinate stopped moving."""


class OpenBoundary(BarrierKitException):
    """Slice pieces could not be stitched into a closed boundary.

    Attributes:
        endpoints (list): The unmatched endpoints.
    """

    def __init__(self, message: str, endpoints: Sequence[Any] = ()) -> None:
        super().__init__(message)
        self.endpoints = list(endpoints)


class InvariantViolation(BarrierKitException):
    """A hard verification invariant failed."""
