"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a model is defined."""


class CalibrationRangeError(ValueError):
    """A measurement or state falls outside the calibrated range of a model."""


class CalibrationError(RuntimeError):
    """Nonlinear calibration failed to converge.

    ``trace`` holds the cost recorded at every residual evaluation.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class SingularInnovationError(ArithmeticError):
    """The innovation covariance C P C^T + R is numerically singular."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(message)
        self.cond = cond


class CovarianceError(ArithmeticError):
    """The error covariance lost positive definiteness."""

    def __init__(self, message, min_eig=float("nan"), step=None):
        super().__init__(message)
        self.min_eig = min_eig
        self.step = step


class DecouplingError(ValueError):
    """Unknown-input decoupling is impossible for the given plant."""

    def __init__(self, message, rank_ce=None, rank_e=None):
        super().__init__(message)
        self.rank_ce = rank_ce
        self.rank_e = rank_e


class FilterRunError(RuntimeError):
    """A filter run aborted; ``step`` names the failing step index."""

    def __init__(self, message, step, estimator=None):
        super().__init__(message)
        self.step = step
        self.estimator = estimator


class DivergenceError(RuntimeError):
    """The simulated object crossed the camera plane."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class NonApplicableBoundError(ValueError):
    """The ultimate bound is undefined because the stability condition fails."""


class TrackError(RuntimeError):
    """A per-object track aborted."""
