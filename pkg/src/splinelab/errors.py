"""Exception hierarchy shared by all splinelab modules."""

from __future__ import annotations

import numpy as np


class SplineLabError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SplineLabError, ValueError):
    """A chart point lies outside the chart's domain."""


class InputError(SplineLabError, ValueError):
    """Malformed or inconsistent input data."""


class SingularControlError(SplineLabError):
    """The maximizing control is not unique (time-minimal cost with alpha = 0)."""


class VelocitySingularityError(SplineLabError):
    """The reduced S^2 description breaks down because the speed is (near) zero."""


class ConstraintDriftError(SplineLabError):
    """An extrinsic state drifted off its constraint manifold."""


class IntegrationError(SplineLabError):
    """Numerical integration stopped before reaching the requested end time.

    The last accepted state is attached so callers can report or restart.
    """

    def __init__(self, message: str, t: float, y: np.ndarray, cause: BaseException | None = None):
        super().__init__(message)
        self.t = float(t)
        self.y = np.array(y, dtype=float)
        self.cause = cause


class StepSizeUnderflow(IntegrationError):
    """The step size fell below ``hmin`` without meeting the tolerance."""


class MaxStepsExceeded(IntegrationError):
    """The step budget ran out."""


class FieldEvaluationError(SplineLabError):
    """The vector field failed at a Runge-Kutta sub-stage."""

    def __init__(self, t_stage: float, cause: BaseException):
        super().__init__(f"field evaluation failed at t={t_stage!r}: {cause}")
        self.t_stage = float(t_stage)
        self.cause = cause


class EventRefinementError(SplineLabError):
    """Bisection on an event function did not converge."""


class ShootingError(SplineLabError):
    """All shooting attempts failed."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
