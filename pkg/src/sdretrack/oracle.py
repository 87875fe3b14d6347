"""Reference implementations used to cross-check the filters.

Deliberately written without any helper shared with :mod:`sdretrack.estimators`.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class KalmanOracleState:
    """Predicted estimate x(k|k-1) and covariance P(k|k-1) of a linear Kalman filter."""

    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def kalman_oracle_step(state, A, B, C, D, u, y):
    """Textbook measurement update followed by time update.

    Returns the next predicted state.
    """
    x, P = state.x, state.P
    u = np.zeros(np.shape(B)[1]) if u is None else np.asarray(u, dtype=float)
    PCt = P.dot(C.T)
    S = C.dot(PCt) + state.R
    K = PCt.dot(np.linalg.inv(S))
    x_f = x + K.dot(y - C.dot(x) - D.dot(u))
    P_f = P - K.dot(S).dot(K.T)
    x_p = A.dot(x_f) + B.dot(u)
    P_p = A.dot(P_f).dot(A.T) + state.Q
    P_p = (P_p + P_p.T) / 2.0
    return KalmanOracleState(x_p, P_p, state.Q, state.R)


def run_kalman_oracle(A, B, C, D, x0, P0, Q, R, inputs, measurements):
    """Run the oracle; returns arrays of predicted estimates and covariances per step."""
    state = KalmanOracleState(np.array(x0, dtype=float), np.array(P0, dtype=float),
                              np.array(Q, dtype=float), np.array(R, dtype=float))
    xs, Ps = [], []
    for u, y in zip(inputs, measurements):
        xs.append(state.x)
        Ps.append(state.P)
        state = kalman_oracle_step(state, A, B, C, D, u, y)
    if np.any(np.linalg.eigvalsh(np.array(Ps))[..., 0] <= 0):
        raise ArithmeticError("oracle covariance lost positive definiteness")
    return np.array(xs), np.array(Ps), state


def scalar_are_fixed_point(a, c, q, r, lo=0.0, hi=None, tol=1e-14):
    """Positive root of p = a² p r / (c² p + r) + q, found by bisection."""
    def g(p):
        return a * a * p * r / (c * c * p + r) + q - p

    if hi is None:
        hi = max(1.0, q)
        while g(hi) > 0:
            hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def inverse_3x3(M):
    """Explicit adjugate inverse of a 3x3 matrix."""
    a, b, c = M[0]
    d, e, f = M[1]
    g, h, i = M[2]
    co = np.array([
        [e * i - f * h, -(b * i - c * h), b * f - c * e],
        [-(d * i - f * g), a * i - c * g, -(a * f - c * d)],
        [d * h - e * g, -(a * h - b * g), a * e - b * d],
    ])
    det = a * co[0, 0] + b * co[1, 0] + c * co[2, 0]
    return co / det


def matmul_loops(X, Y):
    """Triple-loop matrix product."""
    n, m = len(X), len(Y[0])
    k = len(Y)
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += X[i][t] * Y[t][j]
            out[i, j] = s
    return out


def geometric_ratios(r):
    """(X/Z, Y/Z, 1/Z) from a relative position vector."""
    X, Y, Z = r
    return np.array([X / Z, Y / Z, 1.0 / Z])


def relative_position_rate(r, v_c, omega, v_q):
    """Rate of the object position expressed in the moving camera frame."""
    return np.asarray(v_q) - np.asarray(v_c) - np.cross(omega, r)
