"""Unknown-input observer for SDC plants.

For x(k+1) = A x + B u + E d with unknown d and y = C x, the observer

    H  = E (C E)⁺,   T = I - H C
    x̂(k+1) = T (A x̂ + B u) + K (y(k) - C x̂) + H y(k+1)

has error dynamics e(k+1) = (T A - K C) e whenever rank(C E) = rank(E), so the
unknown input drops out. K comes from a Riccati recursion on the pair (T A, C).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .estimators import (EstimateTrace, _check_pd, _gain_and_covariance, _innovation_solve, _input_array,
                         _measurement_list)
from .exceptions import DecouplingError, FilterRunError
from .validation import as_design_matrix, as_vector, check_spd


@dataclass
class UIOState:
    """Observer state; ``y_prev`` is the measurement already folded into ``x_hat``."""

    x_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    t: int = 0
    y_prev: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x_hat0, P0, Q, R, y0=None):
        x = as_vector(x_hat0, name="x_hat0")
        n = x.shape[0]
        P0 = check_spd(as_design_matrix(P0, n, "P0"), "P0")
        Q = check_spd(as_design_matrix(Q, n, "Q"), "Q")
        R = check_spd(np.atleast_2d(np.asarray(R, dtype=float)), "R")
        y0 = None if y0 is None else np.asarray(y0, dtype=float)
        return cls(x, P0.copy(), Q, R, 0, y0)


def decoupling_ranks(system, x, u=None, tol=1e-10):
    """Return ``(rank(C E), rank(E))`` at the given point."""
    if system.E is None:
        raise DecouplingError("system has no unknown-input distribution E")
    u = system._input(u)
    E = np.atleast_2d(system.E(x, u))
    C = system.C(x, u)
    scale = max(np.abs(E).max(), 1e-300)
    rank_e = np.linalg.matrix_rank(E / scale, tol=tol)
    rank_ce = np.linalg.matrix_rank(C @ E / scale, tol=tol)
    return int(rank_ce), int(rank_e)


def check_decoupling(system, x, u=None):
    """Raise :class:`DecouplingError` unless rank(C E) = rank(E) > 0 at ``x``."""
    rank_ce, rank_e = decoupling_ranks(system, x, u)
    if rank_e == 0 or rank_ce != rank_e:
        raise DecouplingError(f"unknown-input decoupling impossible: rank(CE)={rank_ce}, "
                              f"rank(E)={rank_e}", rank_ce, rank_e)
    return rank_ce, rank_e


def uio_step(state, system, u, y):
    """Advance the observer with the new measurement ``y`` (time k+1).

    ``state.y_prev`` holds the measurement of time k. ``y = None`` skips the
    measurement injection (pure model propagation).
    """
    x, P = state.x_hat, state.P
    u = system._input(u)
    A, B = system.A(x, u), system.B(x, u)
    C, D = system.C(x, u), system.D(x, u)
    E = np.atleast_2d(system.E(x, u))
    CE = C @ E
    H = E @ _innovation_solve(CE.T @ CE, CE.T)
    T = np.eye(x.shape[0]) - H @ C
    TA = T @ A
    K, Pn = _gain_and_covariance(TA, P, C, state.Q, state.R)
    _check_pd(Pn, state.t)
    Du = D @ u
    x_new = T @ (A @ x + B @ u)
    if state.y_prev is not None:
        x_new = x_new + K @ (state.y_prev - C @ x - Du)
    if y is not None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"non-finite measurement at step {state.t + 1}")
        x_new = x_new + H @ (y - Du)
    else:
        x_new = x_new + H @ (C @ (A @ x + B @ u))
    return UIOState(x_new, Pn, state.Q, state.R, state.t + 1, y)


def run_uio(system, initial, inputs, measurements, dt=1.0, t0=0.0, truth=None, name="uio"):
    """Run the observer over a measurement sequence.

    ``x_hat[k]`` in the returned trace is the estimate after measurement ``k``
    has been injected (the initial estimate for ``k = 0``).
    """
    ys = _measurement_list(measurements, system.output_dim)
    N = len(ys)
    us = _input_array(inputs, system.input_dim, N)
    n, p = system.state_dim, system.output_dim
    x_hist = np.empty((N, n))
    P_hist = np.empty((N, n, n))
    innov = np.full((N, p), np.nan)
    state = initial
    if N:
        state = UIOState(state.x_hat, state.P, state.Q, state.R, state.t, ys[0])
    for k in range(N):
        x_hist[k] = state.x_hat
        P_hist[k] = state.P
        if state.y_prev is not None:
            C = system.C(state.x_hat, us[k])
            innov[k] = state.y_prev - C @ state.x_hat - system.D(state.x_hat, us[k]) @ us[k]
        if k + 1 < N:
            try:
                state = uio_step(state, system, us[k], ys[k + 1])
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                raise FilterRunError(f"{name} failed at step {k}: {exc}", k, name) from exc
    return EstimateTrace(t0 + dt * np.arange(N), x_hist, innov, P_hist, truth, state, name)


class UnknownInputObserver(TransformerMixin, BaseEstimator):
    """Unknown-input observer as a scikit-learn transformer.

    The decoupling rank condition is checked in ``fit`` at the initial estimate.
    """

    def __init__(self, system=None, Q=1e-3, R=1e-2, P0=1.0, x_hat0=None, dt=1.0):
        self.system = system
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.x_hat0 = x_hat0
        self.dt = dt

    def fit(self, X=None, y=None, U=None):
        if self.system is None:
            raise ValueError("a system must be supplied")
        sys_ = self.system
        x0 = np.zeros(sys_.state_dim) if self.x_hat0 is None else self.x_hat0
        R = as_design_matrix(self.R, sys_.output_dim, "R")
        self.initial_state_ = UIOState.initial(x0, self.P0, self.Q, R)
        u0 = None if U is None else np.asarray(U, dtype=float).reshape(-1, sys_.input_dim)[0]
        self.ranks_ = check_decoupling(sys_, self.initial_state_.x_hat, u0)
        self.n_features_in_ = sys_.output_dim
        return self

    def filter(self, X, U=None, truth=None):
        check_is_fitted(self, "initial_state_")
        s = self.initial_state_
        init = UIOState(s.x_hat.copy(), s.P.copy(), s.Q, s.R)
        return run_uio(self.system, init, U, np.asarray(X, dtype=float), dt=self.dt,
                       truth=truth, name=type(self).__name__)

    def transform(self, X, U=None):
        return self.filter(X, U).x_hat

    def fit_transform(self, X, y=None, U=None):
        return self.fit(X, U=U).transform(X, U)
