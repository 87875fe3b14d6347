"""Switched and plain SDRE filters in predictor form.

x̂(k+1) = A(x̂) x̂ + B(x̂) u + L [y - C(x̂) x̂ - D(x̂) u]
L      = A P Cᵀ (C P Cᵀ + R)⁻¹
P(k+1) = A P Aᵀ + Q - A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ

The switched variant resets P to P0 every ``switch_period`` steps, at the start
of the step and before the gain is computed.
"""

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CovarianceError, FilterRunError, SingularInnovationError
from .validation import as_design_matrix, as_vector, check_spd

RCOND_MIN = 1e-12


@dataclass
class FilterState:
    """Estimate, covariance and design matrices of one filter instance."""

    x_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    t: int = 0
    P0: Optional[np.ndarray] = None
    switch_period: int = 0

    @classmethod
    def initial(cls, x_hat0, P0, Q, R, switch_period=0):
        """Validated initial state; Q, R and P0 may be scalars, diagonals or matrices."""
        x = as_vector(x_hat0, name="x_hat0")
        n = x.shape[0]
        P0 = check_spd(as_design_matrix(P0, n, "P0"), "P0")
        Q = check_spd(as_design_matrix(Q, n, "Q"), "Q")
        R = np.asarray(R, dtype=float)
        if R.ndim == 2:
            R = check_spd(R, "R")
        elif R.ndim == 1:
            R = check_spd(np.diag(R), "R")
        else:
            raise ValueError("R must be given as a diagonal vector or a matrix")
        switch_period = int(switch_period)
        if switch_period < 0:
            raise ValueError("switch_period must be non-negative")
        return cls(x, P0.copy(), Q, R, 0, P0, switch_period)

    def copy(self):
        return FilterState(self.x_hat.copy(), self.P.copy(), self.Q, self.R, self.t,
                           self.P0, self.switch_period)


@dataclass
class EstimatorReport:
    """Per-step diagnostics: gain, innovation and the covariance the gain was built from."""

    gain: np.ndarray
    innovation: np.ndarray
    P: np.ndarray

    @cached_property
    def P_eigs(self):
        ev = np.linalg.eigvalsh(self.P)
        return float(ev[0]), float(ev[-1])


def _innovation_solve(S, rhs):
    """Solve ``S X = rhs`` for symmetric positive definite ``S`` by Cholesky factorization."""
    chol, info = dpotrf(S, lower=1, clean=0)
    if info != 0:
        raise SingularInnovationError("innovation covariance is not positive definite",
                                      float(np.linalg.cond(S)))
    d = chol.diagonal().tolist()
    if len(d) > 1 and (min(d) / max(d)) ** 2 < RCOND_MIN:
        cond = float(np.linalg.cond(S))
        if cond > 1.0 / RCOND_MIN:
            raise SingularInnovationError(
                f"innovation covariance is numerically singular (condition number {cond:.3e})", cond)
    X, info = dpotrs(chol, rhs, lower=1)
    return X


def _gain_and_covariance(A, P, C, Q, R):
    PCt = P @ C.T
    APCt = A @ PCt
    S = C @ PCt + R
    L = _innovation_solve(S, APCt.T).T
    Pn = A @ P @ A.T + Q - L @ APCt.T
    return L, 0.5 * (Pn + Pn.T)


def _check_pd(P, step):
    if dpotrf(P, lower=1, clean=0)[1] != 0:
        min_eig = float(np.linalg.eigvalsh(P)[0])
        raise CovarianceError(f"covariance lost positive definiteness at step {step} "
                              f"(min eigenvalue {min_eig:.3e})", min_eig, step)


def sdre_gain(system, x_hat, P, R, u=None):
    """Filter gain ``A P Cᵀ (C P Cᵀ + R)⁻¹`` at ``x_hat``."""
    u = system._input(u)
    A, C = system.A(x_hat, u), system.C(x_hat, u)
    S = C @ P @ C.T + R
    return _innovation_solve(S, (A @ P @ C.T).T).T


def riccati_step(system, x_hat, P, Q, R, u=None, step=None):
    """One step of the state-dependent Riccati difference equation, symmetrized."""
    u = system._input(u)
    A, C = system.A(x_hat, u), system.C(x_hat, u)
    _, Pn = _gain_and_covariance(A, P, C, Q, R)
    _check_pd(Pn, step)
    return Pn


def filter_step(state, system, u, y):
    """Advance the filter one step.

    ``y = None`` performs a prediction-only step (no measurement available).
    Returns the next :class:`FilterState` and an :class:`EstimatorReport`.
    """
    x, P, t = state.x_hat, state.P, state.t
    if state.switch_period > 0 and t > 0 and t % state.switch_period == 0:
        P = state.P0
    u = system._input(u)
    A, B = system.A(x, u), system.B(x, u)
    x_pred = A @ x + B @ u
    if y is None:
        Pn = A @ P @ A.T + state.Q
        Pn = 0.5 * (Pn + Pn.T)
        gain = np.zeros((state.R.shape[0], x.shape[0])).T
        innov = np.full(state.R.shape[0], np.nan)
        x_new = x_pred
    else:
        y = np.asarray(y, dtype=float)
        if not math.isfinite(y @ y) and not np.all(np.isfinite(y)):
            raise ValueError(f"non-finite measurement at step {t}")
        C, D = system.C(x, u), system.D(x, u)
        innov = y - (C @ x + D @ u)
        gain, Pn = _gain_and_covariance(A, P, C, state.Q, state.R)
        x_new = x_pred + gain @ innov
    _check_pd(Pn, t)
    new = FilterState(x_new, Pn, state.Q, state.R, t + 1, state.P0, state.switch_period)
    return new, EstimatorReport(gain, innov, P)


@dataclass(frozen=True)
class EstimateRecord:
    """One time step of an estimator output, with the truth error when known."""

    t: float
    step: int
    x_hat: np.ndarray
    innovation: np.ndarray
    p_min: float
    p_max: float
    error: Optional[np.ndarray] = None


class EstimateTrace(Sequence):
    """Array-backed sequence of :class:`EstimateRecord`.

    ``x_hat[k]`` is the estimate of the state at step ``k`` held by the
    estimator when measurement ``k`` is processed.
    """

    def __init__(self, t, x_hat, innovation, P, truth=None, final_state=None, name=""):
        self.t = np.asarray(t, dtype=float)
        self.x_hat = np.asarray(x_hat, dtype=float)
        self.innovation = np.asarray(innovation, dtype=float)
        self.P = np.asarray(P, dtype=float)
        self.final_state = final_state
        self.name = name
        self.truth = None if truth is None else np.asarray(truth, dtype=float)
        if self.truth is not None and self.truth.shape != self.x_hat.shape:
            raise ValueError("truth and estimates must have the same shape")

    @cached_property
    def p_eigs(self):
        if len(self) == 0:
            return np.zeros((0, 2))
        ev = np.linalg.eigvalsh(self.P)
        return np.column_stack([ev[:, 0], ev[:, -1]])

    @property
    def p_min(self):
        return self.p_eigs[:, 0]

    @property
    def p_max(self):
        return self.p_eigs[:, 1]

    @property
    def errors(self):
        if self.truth is None:
            raise ValueError("trace has no ground truth attached")
        return self.truth - self.x_hat

    def with_truth(self, truth):
        return EstimateTrace(self.t, self.x_hat, self.innovation, self.P, truth,
                             self.final_state, self.name)

    def __len__(self):
        return self.x_hat.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        err = None if self.truth is None else self.truth[k] - self.x_hat[k]
        return EstimateRecord(float(self.t[k]), k, self.x_hat[k].copy(), self.innovation[k].copy(),
                              float(self.p_eigs[k, 0]), float(self.p_eigs[k, 1]), err)

    def to_csv(self, path):
        """Write ``t,step,x_hat...,innov...,p_min,p_max`` rows."""
        n = self.x_hat.shape[1] if self.x_hat.ndim == 2 else 0
        p = self.innovation.shape[1] if self.innovation.ndim == 2 else 0
        header = ["t", "step"] + [f"x_hat{i}" for i in range(n)] + [f"innov{i}" for i in range(p)]
        header += ["p_min", "p_max"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            eigs = self.p_eigs
            for k in range(len(self)):
                w.writerow([repr(float(self.t[k])), k] + [repr(float(v)) for v in self.x_hat[k]]
                           + [repr(float(v)) for v in self.innovation[k]]
                           + [repr(float(eigs[k, 0])), repr(float(eigs[k, 1]))])


def _measurement_list(measurements, p):
    if measurements is None:
        return []
    if isinstance(measurements, np.ndarray):
        arr = measurements.reshape(-1, p) if measurements.size else np.zeros((0, p))
        return list(arr)
    return [None if m is None else np.asarray(m, dtype=float) for m in measurements]


def run_filter(system, initial, inputs, measurements, dt=1.0, t0=0.0, truth=None, name="sdre"):
    """Run :func:`filter_step` over aligned input and measurement sequences.

    ``None`` entries in ``measurements`` give prediction-only steps. Returns an
    :class:`EstimateTrace`; any step failure raises :class:`FilterRunError`
    carrying the step index.
    """
    ys = _measurement_list(measurements, system.output_dim)
    us = _input_array(inputs, system.input_dim, len(ys))
    n = system.state_dim
    N = len(ys)
    x_hist = np.empty((N, n))
    P_hist = np.empty((N, n, n))
    innov = np.empty((N, system.output_dim))
    state = initial
    for k in range(N):
        x_hist[k] = state.x_hat
        try:
            state, report = filter_step(state, system, us[k], ys[k])
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise FilterRunError(f"{name} failed at step {k}: {exc}", k, name) from exc
        P_hist[k] = report.P
        innov[k] = report.innovation
    t = t0 + dt * np.arange(N)
    return EstimateTrace(t, x_hist, innov, P_hist, truth, state, name)


def _input_array(inputs, m, N):
    if inputs is None or m == 0:
        return np.zeros((N, m))
    us = np.asarray(inputs, dtype=float)
    if us.size == 0 and N == 0:
        return np.zeros((0, m))
    us = us.reshape(-1, m)
    if us.shape[0] != N:
        raise ValueError(f"inputs ({us.shape[0]}) and measurements ({N}) differ in length")
    return us


class SwitchedSDREFilter(TransformerMixin, BaseEstimator):
    """SDRE filter with periodic covariance resets, as a scikit-learn transformer.

    ``fit`` validates the configuration against the plant; ``transform`` maps
    a measurement sequence (steps x outputs) to the estimate sequence
    (steps x states). Inputs are passed through the ``U`` argument.

    Parameters
    ----------
    system : SdcSystem
    Q, R, P0 : scalar, diagonal vector or matrix
    switch_period : int
        Steps between covariance resets; 0 disables switching.
    x_hat0 : array-like, optional
        Initial estimate (zeros by default).
    dt : float
        Sample time used for trace timestamps.
    """

    def __init__(self, system=None, Q=1e-3, R=1e-2, P0=1.0, switch_period=50, x_hat0=None, dt=1.0):
        self.system = system
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.switch_period = switch_period
        self.x_hat0 = x_hat0
        self.dt = dt

    def _period(self):
        return self.switch_period

    def _initial_state(self):
        sys_ = self.system
        x0 = np.zeros(sys_.state_dim) if self.x_hat0 is None else self.x_hat0
        R = as_design_matrix(self.R, sys_.output_dim, "R")
        return FilterState.initial(x0, self.P0, self.Q, R, self._period())

    def fit(self, X=None, y=None, U=None):
        if self.system is None:
            raise ValueError("a system must be supplied")
        self.initial_state_ = self._initial_state()
        self.system.check_dimensions(self.initial_state_.x_hat, None)
        self.n_features_in_ = self.system.output_dim
        self.state_ = self.initial_state_.copy()
        return self

    def filter(self, X, U=None, truth=None):
        """Run from the initial state and return the full :class:`EstimateTrace`."""
        check_is_fitted(self, "initial_state_")
        return run_filter(self.system, self.initial_state_.copy(), U, np.asarray(X, dtype=float),
                          dt=self.dt, truth=truth, name=type(self).__name__)

    def transform(self, X, U=None):
        return self.filter(X, U).x_hat

    def fit_transform(self, X, y=None, U=None):
        return self.fit(X).transform(X, U)

    def step(self, u, y):
        """Online update of the internal state; returns the new estimate."""
        check_is_fitted(self, "state_")
        self.state_, self.last_report_ = filter_step(self.state_, self.system, u, y)
        return self.state_.x_hat


class SDREFilter(SwitchedSDREFilter):
    """Plain SDRE filter (no covariance switching)."""

    def __init__(self, system=None, Q=1e-3, R=1e-2, P0=1.0, x_hat0=None, dt=1.0):
        super().__init__(system=system, Q=Q, R=R, P0=P0, switch_period=0, x_hat0=x_hat0, dt=dt)

    def _period(self):
        return 0
