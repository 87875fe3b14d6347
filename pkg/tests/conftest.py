import numpy as np
import pytest

ACCEPTANCE_LINES = []


def random_lti(rng, n=None, p=None, m=None):
    """Random stable, observable LTI plant with dimension <= 4."""
    n = int(rng.integers(1, 5)) if n is None else n
    p = int(rng.integers(1, n + 1)) if p is None else p
    m = int(rng.integers(0, 3)) if m is None else m
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.5, 0.98) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = 0.1 * rng.standard_normal((p, m))
    Lq = rng.standard_normal((n, n))
    Q = Lq @ Lq.T / n + 1e-2 * np.eye(n)
    Lr = rng.standard_normal((p, p))
    R = Lr @ Lr.T / p + 1e-1 * np.eye(p)
    return A, B, C, D, Q, R


def simulate_lti(rng, A, B, C, D, Q, R, N):
    n, m, p = A.shape[0], B.shape[1], C.shape[0]
    U = rng.standard_normal((N, m))
    W = rng.multivariate_normal(np.zeros(n), Q, size=N)
    V = rng.multivariate_normal(np.zeros(p), R, size=N)
    x = rng.standard_normal(n)
    Y = np.empty((N, p))
    for k in range(N):
        Y[k] = C @ x + D @ U[k] + V[k]
        x = A @ x + B @ U[k] + W[k]
    return U, Y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
