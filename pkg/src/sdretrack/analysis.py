"""Certificate quantities for the switched SDRE filter.

Observability Gramians along trajectories, sampled model bounds and Lipschitz
constants, the contraction constant, the sufficient stability condition, the
average dwell time and the ultimate error bound.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DomainError, NonApplicableBoundError
from .validation import check_positive

COND_GUARD = 1e12


# ---------------------------------------------------------------------------
# Observability


@dataclass(frozen=True)
class GramianResult:
    matrix: np.ndarray
    min_eig: float
    max_eig: float


def _transition(system, x, u, linearization):
    if linearization == "sdc":
        return system.A(x, u)
    if linearization == "jacobian":
        if system.jacobian is not None:
            return system.jacobian(x, u)
        return numerical_jacobian(lambda z: system.step(z, u), x)
    raise ValueError(f"unknown linearization {linearization!r}")


def numerical_jacobian(f, x, rel_step=1e-6):
    """Central-difference Jacobian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = []
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        dx = np.zeros(n)
        dx[i] = h
        cols.append((np.asarray(f(x + dx)) - np.asarray(f(x - dx))) / (2 * h))
    return np.column_stack(cols)


def observability_gramian(system, trajectory, a, inputs=None, t=0, linearization="jacobian",
                          form="forward"):
    """Windowed observability Gramian along a trajectory.

    chi(i, t) = A_{i-1} ... A_t with chi(t, t) = I, where A_i is the transition
    matrix at trajectory point i: the Jacobian of the full transition map
    (``linearization="jacobian"``) or the SDC matrix (``"sdc"``).

    ``form="forward"`` sums chi^T C^T C chi (sensitivity of the window outputs
    to the state at t); ``form="backward"`` sums chi^{-T} C^T C chi^{-1}
    (reconstruction of the state at the end of the window). Both forms raise
    if chi becomes numerically singular, naming the step.
    """
    xs = np.asarray(trajectory, dtype=float)
    a = int(a)
    if a < 0:
        raise ValueError("window must be non-negative")
    if xs.shape[0] < t + a + 1:
        raise ValueError(f"trajectory has {xs.shape[0]} points, window needs {t + a + 1}")
    n = system.state_dim
    us = np.zeros((xs.shape[0], system.input_dim)) if inputs is None else np.asarray(inputs, dtype=float)
    G = np.zeros((n, n))
    chi = np.eye(n)
    for i in range(t, t + a + 1):
        C = system.C(xs[i], us[i])
        if form == "forward":
            M = C @ chi
        elif form == "backward":
            M = C @ np.linalg.inv(chi)
        else:
            raise ValueError(f"unknown form {form!r}")
        G += M.T @ M
        if i < t + a:
            chi = _transition(system, xs[i], us[i], linearization) @ chi
            cond = np.linalg.cond(chi)
            if not np.isfinite(cond) or cond > COND_GUARD:
                raise np.linalg.LinAlgError(
                    f"transition product singular at step {i + 1} (condition number {cond:.3e})")
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    return GramianResult(G, float(ev[0]), float(ev[-1]))


# ---------------------------------------------------------------------------
# Bounds


@dataclass(frozen=True)
class ModelBounds:
    """Norm bounds, covariance bounds and Lipschitz constants of a plant/filter pair."""

    a_bar: float
    c_bar: float
    sigma: float
    rho: float
    p_bar: float
    p_under: float
    q_under: float
    r_under: float
    k_A: float
    k_B: float
    k_C: float
    k_D: float
    eps_prime: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if self.p_under > self.p_bar:
            raise ValueError("p_under must not exceed p_bar")

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return ModelBounds(**data)


def _box_arrays(box, dim, key):
    ranges = box.get(key)
    if ranges is None:
        return np.zeros(dim), np.zeros(dim)
    ranges = np.asarray(ranges, dtype=float).reshape(dim, 2)
    lo, hi = ranges[:, 0], ranges[:, 1]
    if np.any(hi < lo):
        raise ValueError(f"box {key} has a range with upper < lower")
    return lo, hi


def _spectral_norms(stack):
    if stack.shape[1] == 0 or stack.shape[2] == 0:
        return np.zeros(stack.shape[0])
    return np.linalg.norm(stack, ord=2, axis=(1, 2))


def estimate_bounds(system, box, n_samples=10000, Q=None, R=None, P_range=None,
                    eps_prime=None, seed=0):
    """Monte-Carlo bound and Lipschitz estimates over an operating box.

    ``box`` maps ``"state"`` and ``"input"`` to lists of ``(low, high)`` per
    component. Lipschitz constants are maxima of difference quotients over
    random pairs within ``eps_prime`` of each other at a shared input; they
    and the norm suprema are statistical lower bounds of the true values.
    ``P_range`` gives ``(p_under, p_bar)``; ``Q`` and ``R`` give q_under and
    r_under as their minimum eigenvalues.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    n, m = system.state_dim, system.input_dim
    xlo, xhi = _box_arrays(box, n, "state")
    ulo, uhi = _box_arrays(box, m, "input")
    widths = xhi - xlo
    if not np.any(widths > 0):
        raise ValueError("state box is degenerate")
    if eps_prime is None:
        eps_prime = 0.1 * float(widths[widths > 0].min())
    rng = np.random.default_rng(seed)
    X = rng.uniform(xlo, xhi, size=(n_samples, n))
    U = rng.uniform(ulo, uhi, size=(n_samples, m))
    direction = rng.standard_normal((n_samples, n)) * (widths > 0)
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    radius = eps_prime * rng.uniform(0.01, 1.0, size=(n_samples, 1))
    X2 = np.clip(X + radius * direction, xlo, xhi)
    dist = np.linalg.norm(X - X2, axis=1)
    keep = dist > 0

    def stacks(fn):
        first = np.array([fn(x, u) for x, u in zip(X, U)])
        second = np.array([fn(x, u) for x, u in zip(X2, U)])
        return first, second

    A1, A2 = stacks(system.A)
    B1, B2 = stacks(system.B)
    C1, C2 = stacks(system.C)
    D1, D2 = stacks(system.D)

    def lipschitz(M1, M2):
        if not np.any(keep):
            return 0.0
        q = _spectral_norms(M1[keep] - M2[keep]) / dist[keep]
        return float(q.max())

    a_bar = float(_spectral_norms(A1).max())
    c_bar = float(_spectral_norms(C1).max())
    sigma = float(np.linalg.norm(np.maximum(np.abs(xlo), np.abs(xhi))))
    rho = float(np.linalg.norm(np.maximum(np.abs(ulo), np.abs(uhi))))
    if P_range is None:
        p_under = p_bar = 1.0
    else:
        p_under, p_bar = (float(v) for v in P_range)
    q_under = 1.0 if Q is None else float(np.linalg.eigvalsh(np.atleast_2d(Q))[0])
    r_under = 1.0 if R is None else float(np.linalg.eigvalsh(np.atleast_2d(R))[0])
    return ModelBounds(a_bar, c_bar, sigma, rho, p_bar, p_under, q_under, r_under,
                       lipschitz(A1, A2), lipschitz(B1, B2), lipschitz(C1, C2), lipschitz(D1, D2),
                       float(eps_prime))


def _closed_loop_norm_bound(b):
    return b.a_bar + b.a_bar * b.p_bar * b.c_bar ** 2 / b.r_under


def lambda_from_bounds(b):
    """Contraction constant: 1 - lambda = (1 + q/(p (a + a p c^2 / r)^2))^-1."""
    if min(b.a_bar, b.c_bar, b.p_bar, b.r_under) <= 0:
        raise ValueError("a_bar, c_bar, p_bar and r_under must be positive")
    s = b.q_under / (b.p_bar * _closed_loop_norm_bound(b) ** 2)
    return s / (1.0 + s)


def k_constants(b):
    """Return ``(k_prime, k_phi)`` from the bounds and Lipschitz constants."""
    gain_bound = b.a_bar * b.p_bar * b.c_bar / b.r_under
    k_prime = (b.k_A * b.sigma + b.k_B * b.rho) + gain_bound * (b.k_C * b.sigma + b.k_D * b.rho)
    k_phi = (k_prime / b.p_under) * (2.0 * _closed_loop_norm_bound(b) + k_prime * b.eps_prime)
    return k_prime, k_phi


def dwell_time(mu, lambda0):
    """Minimum average dwell time ``-ln(mu) / ln(1 - lambda0)`` in steps."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    if not 0 < lambda0 < 1:
        raise DomainError(f"lambda0 must lie in (0, 1), got {lambda0}")
    return -math.log(mu) / math.log1p(-lambda0)


# ---------------------------------------------------------------------------
# Stability condition and ultimate bound


@dataclass(frozen=True)
class UncertaintyTerms:
    """Norms of the uncertainty injection u = -L v + Gamma w used by the certificate."""

    weighted: float  # ||Pi_next u||
    coupled: float  # ||u^T Pi_next (A - L C)||
    plain: float  # ||u||


def uncertainty_terms(Pi_next, L, v_bound, w_bound, Gamma, closed_loop=None):
    """Evaluate the uncertainty norms.

    Vector ``v_bound``/``w_bound`` are used as the actual uncertainty
    realization; scalars are norm bounds and give worst-case values through
    the sub-multiplicative inequality.
    """
    Pi_next = np.atleast_2d(Pi_next)
    L = np.atleast_2d(L)
    Gamma = np.atleast_2d(Gamma)
    n = Pi_next.shape[0]
    M = np.eye(n) if closed_loop is None else np.atleast_2d(closed_loop)
    if np.ndim(v_bound) == 0 and np.ndim(w_bound) == 0:
        mag = np.linalg.norm(L, 2) * float(v_bound) + np.linalg.norm(Gamma, 2) * float(w_bound)
        return UncertaintyTerms(float(np.linalg.norm(Pi_next, 2) * mag),
                                float(np.linalg.norm(Pi_next @ M, 2) * mag), float(mag))
    u = -L @ np.asarray(v_bound, dtype=float).reshape(-1) + Gamma @ np.asarray(w_bound, dtype=float).reshape(-1)
    return UncertaintyTerms(float(np.linalg.norm(Pi_next @ u)), float(np.linalg.norm(u @ Pi_next @ M)),
                            float(np.linalg.norm(u)))


@dataclass(frozen=True)
class ConditionResult:
    holds: bool
    slack: float

    def __bool__(self):
        return self.holds


def check_condition_19(Pi_t, Pi_next, L, v_bound, w_bound, Gamma, k_prime, lam, lambda0):
    """Sufficient stability condition

        2 k' ||Pi_next (-L v + Gamma w)|| + (lambda0 + lambda/2) eig_max(Pi_t)
            <= lambda eig_min(Pi_t)

    Returns the truth value and the slack (right side minus left side).
    """
    ev = np.linalg.eigvalsh(np.atleast_2d(Pi_t))
    terms = uncertainty_terms(Pi_next, L, v_bound, w_bound, Gamma)
    lhs = 2.0 * k_prime * terms.weighted + (lambda0 + lam / 2.0) * ev[-1]
    slack = lam * ev[0] - lhs
    return ConditionResult(bool(slack >= 0), float(slack))


def bound_coefficients(Pi_t, Pi_next, L, A, C, v_bound, w_bound, Gamma, k_prime, lam):
    """Quadratic coefficients (a, b, c) of the error-bound equation a e^2 + b e + c = 0."""
    Pi_t = np.atleast_2d(Pi_t)
    ev = np.linalg.eigvalsh(Pi_t)
    closed = np.atleast_2d(A) - np.atleast_2d(L) @ np.atleast_2d(C)
    terms = uncertainty_terms(Pi_next, L, v_bound, w_bound, Gamma, closed)
    ev_next = np.linalg.eigvalsh(np.atleast_2d(Pi_next))
    a = -2.0 * k_prime * terms.weighted + lam * (ev[0] - ev[-1] / 2.0)
    b = -2.0 * terms.coupled
    c = -ev_next[0] * terms.plain
    return a, b, c


def bound_root(a, b, c):
    """Non-negative root ``(-b + |sqrt(b^2 - 4ac)|) / (2a)``; requires a > 0."""
    if not a > 0:
        raise NonApplicableBoundError(f"stability condition fails (a = {a:.3e} <= 0)")
    disc = b * b - 4.0 * a * c
    return (-b + abs(math.sqrt(max(disc, 0.0)))) / (2.0 * a)


def ultimate_bound(a, b, c, p_bar, p_under):
    """Ultimate error bound: quadratic root scaled by sqrt(p_bar / p_under)."""
    check_positive(p_bar, "p_bar")
    check_positive(p_under, "p_under")
    return math.sqrt(p_bar / p_under) * bound_root(a, b, c)


# ---------------------------------------------------------------------------
# Run-level certificate


@dataclass
class StabilityCertificate:
    """Certificate quantities evaluated for one filter run."""

    lam: float
    lambda0: float
    k_prime: float
    k_phi: float
    mu: float
    tau_a_min: float
    condition_19_holds: bool
    ultimate_bound: float
    p_bar: float
    p_under: float
    min_slack: float = float("nan")
    steps_evaluated: int = 0
    steps_holding: int = 0
    notes: list = field(default_factory=list)

    @property
    def p_ratio(self):
        return self.p_bar / self.p_under

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["p_ratio"] = self.p_ratio
        return d


QUADRATIC_NOTE = ("constant coefficient c is linear in the uncertainty norm while a and b "
                  "multiply squared and linear error terms; coefficients are evaluated as defined, "
                  "without dimensional correction")


def _gamma_for(system):
    n = system.state_dim
    G = np.atleast_2d(system.G)
    return np.hstack([np.eye(n), np.eye(n), G])


def run_certificate(system, trace, inputs, Q, R, bounds, lambda0, v_bound, w_bound, Gamma=None,
                    start=0):
    """Evaluate the stability condition and ultimate bound along a filter trace.

    ``bounds`` supplies the plant constants; its covariance fields are replaced
    by the extrema of P over the evaluated steps. The run-level ultimate bound
    is sqrt(p_bar/p_under) times the largest per-step quadratic root; it is
    reported as infinite when the condition fails at any evaluated step.
    """
    if Gamma is None:
        Gamma = _gamma_for(system)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    N = len(trace)
    us = np.zeros((N, system.input_dim)) if inputs is None else np.asarray(inputs, dtype=float)
    eigs = trace.p_eigs[start:]
    if eigs.shape[0] < 2:
        raise ValueError("trace too short for certificate evaluation")
    p_bar, p_under = float(eigs[:, 1].max()), float(eigs[:, 0].min())
    b = bounds.replace(p_bar=p_bar, p_under=p_under)
    lam = lambda_from_bounds(b)
    k_prime, k_phi = k_constants(b)
    mu = p_bar / p_under
    slacks, roots = [], []
    for k in range(start, N - 1):
        x, u = trace.x_hat[k], us[k]
        P = trace.P[k]
        A, C = system.A(x, u), system.C(x, u)
        APCt = A @ P @ C.T
        S = C @ P @ C.T + R
        L = np.linalg.solve(S, APCt.T).T
        P_next = A @ P @ A.T + Q - L @ APCt.T
        Pi_t = np.linalg.inv(P)
        Pi_next = np.linalg.inv(0.5 * (P_next + P_next.T))
        res = check_condition_19(Pi_t, Pi_next, L, v_bound, w_bound, Gamma, k_prime, lam, lambda0)
        slacks.append(res.slack)
        a, bb, c = bound_coefficients(Pi_t, Pi_next, L, A, C, v_bound, w_bound, Gamma, k_prime, lam)
        roots.append(bound_root(a, bb, c) if a > 0 else math.inf)
    slacks = np.array(slacks)
    holds = bool(np.all(slacks >= 0))
    bound = math.sqrt(mu) * max(roots) if holds else math.inf
    tau = dwell_time(mu, lambda0) if mu > 0 else 0.0
    return StabilityCertificate(lam, lambda0, k_prime, k_phi, mu, tau, holds, bound, p_bar, p_under,
                                float(slacks.min()), int(slacks.size), int(np.sum(slacks >= 0)),
                                [QUADRATIC_NOTE])
