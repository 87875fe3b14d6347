"""State-dependent coefficient (SDC) plant descriptions and the two camera/object models.

Every coefficient map takes ``(x, u)`` so that measured exogenous signals such as
camera velocity may enter the coefficient matrices.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import DomainError
from .validation import as_vector, check_positive

Map = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CameraMotion:
    """Camera linear velocity ``v_c`` (m/s) and angular velocity ``omega`` (rad/s)."""

    v_c: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_c", as_vector(self.v_c, 3, "v_c"))
        object.__setattr__(self, "omega", as_vector(self.omega, 3, "omega"))

    def as_input(self):
        """Stack as the 6-vector ``(v_c, omega)`` used as plant input."""
        return np.concatenate([self.v_c, self.omega])


@dataclass(frozen=True)
class ObjectMotion:
    """Object linear velocity ``v_q`` (m/s) in the camera frame."""

    v_q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_q", as_vector(self.v_q, 3, "v_q"))


def _zeros_map(rows, cols):
    z = np.zeros((rows, cols))
    return lambda x, u: z


def _const_map(m):
    m = np.array(m, dtype=float)
    m.setflags(write=False)
    return lambda x, u: m


@dataclass(frozen=True)
class SdcSystem:
    """Discrete-time plant in state-dependent coefficient form.

    x(k+1) = A(x,u) x + B(x,u) u + G w,   y = C(x,u) x + D(x,u) u + D1 v

    ``E`` optionally gives the unknown-input distribution used by the
    unknown-input observer; ``jacobian`` optionally gives the Jacobian of the
    full transition map, used for local observability analysis.
    """

    state_dim: int
    input_dim: int
    output_dim: int
    A: Map
    B: Map
    C: Map
    D: Optional[Map] = None
    G: Optional[np.ndarray] = None
    D1: Optional[np.ndarray] = None
    E: Optional[Map] = None
    jacobian: Optional[Map] = None
    parameterization_id: str = "default"
    box: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        n, m, p = self.state_dim, self.input_dim, self.output_dim
        if self.D is None:
            object.__setattr__(self, "D", _zeros_map(p, m))
        if self.G is None:
            object.__setattr__(self, "G", np.eye(n))
        if self.D1 is None:
            object.__setattr__(self, "D1", np.eye(p))

    @classmethod
    def linear(cls, A, B, C, D=None, **kwargs):
        """Build a time-invariant system from constant matrices."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        n = A.shape[0]
        p = C.shape[0]
        if B is None:
            B = np.zeros((n, 0))
        B = np.asarray(B, dtype=float).reshape(n, -1)
        m = B.shape[1]
        D = np.zeros((p, m)) if D is None else np.asarray(D, dtype=float).reshape(p, m)
        kwargs.setdefault("parameterization_id", "linear")
        return cls(n, m, p, _const_map(A), _const_map(B), _const_map(C), _const_map(D),
                   jacobian=_const_map(A), **kwargs)

    def step(self, x, u=None):
        """Noise-free transition ``A(x,u) x + B(x,u) u``."""
        u = self._input(u)
        return self.A(x, u) @ x + self.B(x, u) @ u

    def output(self, x, u=None):
        u = self._input(u)
        return self.C(x, u) @ x + self.D(x, u) @ u

    def matrices(self, x, u=None):
        """Evaluate ``(A, B, C, D)`` at one point."""
        u = self._input(u)
        return self.A(x, u), self.B(x, u), self.C(x, u), self.D(x, u)

    def check_dimensions(self, x, u=None):
        """Raise ``ValueError`` if any map returns a wrongly sized or non-finite matrix."""
        n, m, p = self.state_dim, self.input_dim, self.output_dim
        x = as_vector(x, n, "state")
        u = self._input(u)
        for name, mat, shape in zip("ABCD", self.matrices(x, u), [(n, n), (n, m), (p, n), (p, m)]):
            mat = np.asarray(mat)
            if mat.shape != shape:
                raise ValueError(f"{name}(x) has shape {mat.shape}, expected {shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name}(x) has non-finite entries")
        return True

    def with_output(self, C, D=None, parameterization_id=None):
        """Copy of the system with a different output map (constant matrix or callable)."""
        if not callable(C):
            C_arr = np.atleast_2d(np.asarray(C, dtype=float))
            p = C_arr.shape[0]
            C = _const_map(C_arr)
        else:
            p = np.asarray(C(np.ones(self.state_dim) * 0.1, np.zeros(self.input_dim))).shape[0]
        if D is None:
            D = _zeros_map(p, self.input_dim)
        elif not callable(D):
            D = _const_map(D)
        return replace(self, C=C, D=D, output_dim=p, D1=np.eye(p),
                       parameterization_id=parameterization_id or self.parameterization_id)

    def _input(self, u):
        if u is None:
            return np.zeros(self.input_dim)
        return np.asarray(u, dtype=float)


def euler_discretize(dynamics, T):
    """Return the forward-Euler transition ``x + T f(x, u)`` of ``dynamics(x, u)``."""
    T = check_positive(T, "T")

    def transition(x, u=None):
        x = np.asarray(x, dtype=float)
        return x + T * np.asarray(dynamics(x, u), dtype=float)

    return transition


# ---------------------------------------------------------------------------
# Full 3-D model: state (X/Z, Y/Z, 1/Z)


def _check_depth(x3):
    if not x3 > 0:
        raise DomainError(f"inverse depth must be positive, got {x3}")


def sfm_dynamics_3d(x, cam, obj):
    """Time derivative of (X/Z, Y/Z, 1/Z) under camera and object motion."""
    x1, x2, x3 = np.asarray(x, dtype=float)
    _check_depth(x3)
    vc1, vc2, vc3 = cam.v_c
    w1, w2, w3 = cam.omega
    vq1, vq2, vq3 = obj.v_q
    om1 = w3 * x2 - w2 - w2 * x1 ** 2 + w1 * x1 * x2
    om2 = -w3 * x1 + w1 - w2 * x1 * x2 + w1 * x2 ** 2
    z1 = (vc3 * x1 - vc1) * x3
    z2 = (vc3 * x2 - vc2) * x3
    return np.array([
        om1 + z1 + vq1 * x3 - x1 * vq3 * x3,
        om2 + z2 + vq2 * x3 - x2 * vq3 * x3,
        vc3 * x3 ** 2 - (w2 * x1 - w1 * x2) * x3 - vq3 * x3 ** 2,
    ])


def object_velocity_matrix_3d(x):
    """Matrix mapping object velocity into the 3-D state derivative."""
    x1, x2, x3 = x
    return np.array([
        [x3, 0.0, -x1 * x3],
        [0.0, x3, -x2 * x3],
        [0.0, 0.0, -x3 * x3],
    ])


_B3 = np.zeros((3, 6))
_B3[0, 4] = -1.0
_B3[1, 3] = 1.0


def sfm3d_coefficients(x, u):
    """Continuous-time SDC pair (A_c, B_c) for the 3-D model with ``u = (v_c, omega)``."""
    x1, x2, x3 = x
    vc1, vc2, vc3, w1, w2, w3 = u
    A = np.array([
        [-w2 * x1, w3 + w1 * x1, vc3 * x1 - vc1],
        [-w3 - w2 * x2, w1 * x2, vc3 * x2 - vc2],
        [0.0, 0.0, vc3 * x3 - w2 * x1 + w1 * x2],
    ])
    return A, _B3


def sfm3d_system(T, unknown_inputs=(2,)):
    """Euler-discretized 3-D SFM plant measuring (x1, x2).

    ``unknown_inputs`` selects the object-velocity components whose columns form
    the unknown-input distribution ``E``.
    """
    T = check_positive(T, "T")
    idx = list(unknown_inputs)
    eye = np.eye(3)
    B = T * _B3
    B.setflags(write=False)

    def A(x, u):
        x1, x2, x3 = x
        vc1, vc2, vc3, w1, w2, w3 = u
        return np.array([
            [1.0 - T * w2 * x1, T * (w3 + w1 * x1), T * (vc3 * x1 - vc1)],
            [-T * (w3 + w2 * x2), 1.0 + T * w1 * x2, T * (vc3 * x2 - vc2)],
            [0.0, 0.0, 1.0 + T * (vc3 * x3 - w2 * x1 + w1 * x2)],
        ])

    def E(x, u):
        return T * object_velocity_matrix_3d(x)[:, idx]

    def jac(x, u):
        x1, x2, x3 = x
        vc1, vc2, vc3, w1, w2, w3 = u
        J = np.array([
            [-2 * w2 * x1 + w1 * x2 + vc3 * x3, w3 + w1 * x1, vc3 * x1 - vc1],
            [-w3 - w2 * x2, -w2 * x1 + 2 * w1 * x2 + vc3 * x3, vc3 * x2 - vc2],
            [-w2 * x3, w1 * x3, 2 * vc3 * x3 - w2 * x1 + w1 * x2],
        ])
        return eye + T * J

    C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return SdcSystem(3, 6, 2, A, lambda x, u: B, _const_map(C), E=E, jacobian=jac,
                     parameterization_id="sfm3d-euler")


def sfm3d_truth_step(x, cam, obj, T):
    """One Euler step of the true 3-D dynamics."""
    return np.asarray(x, dtype=float) + T * sfm_dynamics_3d(x, cam, obj)


# ---------------------------------------------------------------------------
# Reduced vehicle model: state (x2, x3, x5 = Vq2, x6 = Vq3), x1 held constant

PARAMETERIZATIONS = {"printed": 0.5, "euler": 1.0}


def _step_factor(parameterization):
    try:
        return PARAMETERIZATIONS[parameterization]
    except KeyError:
        raise ValueError(f"unknown parameterization {parameterization!r}; "
                         f"choose from {sorted(PARAMETERIZATIONS)}") from None


def reduced_vehicle_sdc(x, T, x1=0.0, parameterization="printed"):
    """Return ``(A, B1, B2)`` of the reduced vehicle model.

    ``B1`` multiplies the camera linear velocity and ``B2`` the angular velocity.
    The ``"printed"`` parameterization uses half-step factors T/2, ``"euler"``
    uses the plain forward-Euler factor T.
    """
    T = check_positive(T, "T")
    h = _step_factor(parameterization) * T
    x2, x3, x5, x6 = np.asarray(x, dtype=float)
    A = np.array([
        [1.0, -h * x2 * x6, h * x3, 0.0],
        [0.0, 1.0, 0.0, -h * x3 * x3],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B1 = np.array([
        [0.0, -h * x3, h * x2 * x3],
        [0.0, 0.0, h * x3 * x3],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
    ])
    B2 = np.array([
        [h * (1.0 + x2 * x2), -h * x1 * x2, -h * x1],
        [h * x2 * x3, -h * x1 * x3, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
    ])
    return A, B1, B2


def reduced_vehicle_jacobian(x, u, T, x1=0.0, parameterization="printed"):
    """Jacobian of the full reduced transition map with respect to the state."""
    h = _step_factor(parameterization) * T
    x2, x3, x5, x6 = x
    vc1, vc2, vc3, w1, w2, w3 = u
    J = np.eye(4)
    J[0, 0] += h * (-w2 * x1 + 2 * w1 * x2 + vc3 * x3 - x6 * x3)
    J[0, 1] += h * (vc3 * x2 - vc2 + x5 - x2 * x6)
    J[0, 2] += h * x3
    J[0, 3] += -h * x2 * x3
    J[1, 0] += h * w1 * x3
    J[1, 1] += h * (2 * vc3 * x3 - w2 * x1 + w1 * x2 - 2 * x6 * x3)
    J[1, 3] += -h * x3 * x3
    return J


DEFAULT_REDUCED_BOX = {
    "x2": (-1.0, 1.0),
    "x3": (0.01, 1.0),
    "x5": (-40.0, 40.0),
    "x6": (-40.0, 40.0),
    "v_c": (-40.0, 40.0),
    "omega": (-0.5, 0.5),
}


def reduced_vehicle_system(T, C=None, x1=0.0, parameterization="euler"):
    """Reduced vehicle plant with input ``u = (v_c, omega)``.

    ``C`` may be a constant output matrix or a callable ``C(x, u)``; it defaults
    to measuring ``x2`` only.
    """
    T = check_positive(T, "T")
    h = _step_factor(parameterization) * T
    x1 = float(x1)

    def A(x, u):
        x2, x3, x5, x6 = x
        return np.array([
            [1.0, -h * x2 * x6, h * x3, 0.0],
            [0.0, 1.0, 0.0, -h * x3 * x3],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])

    def B(x, u):
        x2, x3, x5, x6 = x
        return np.array([
            [0.0, -h * x3, h * x2 * x3, h * (1.0 + x2 * x2), -h * x1 * x2, -h * x1],
            [0.0, 0.0, h * x3 * x3, h * x2 * x3, -h * x1 * x3, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ])

    def jac(x, u):
        return reduced_vehicle_jacobian(x, u, T, x1, parameterization)

    if C is None:
        C = np.array([[1.0, 0.0, 0.0, 0.0]])
    if callable(C):
        C_map = C
        p = np.asarray(C(np.array([0.0, 0.05, 0.0, 0.0]), np.zeros(6))).shape[0]
    else:
        C_arr = np.atleast_2d(np.asarray(C, dtype=float))
        C_map = _const_map(C_arr)
        p = C_arr.shape[0]
    return SdcSystem(4, 6, p, A, B, C_map, jacobian=jac,
                     parameterization_id=f"reduced-{parameterization}",
                     box=dict(DEFAULT_REDUCED_BOX))


def reduced_truth_step(x, cam, T, x1=0.0):
    """Euler step of the reduced model evaluated directly from the 3-D dynamics.

    The object velocity is taken from the state (x5, x6) and x1 is held fixed.
    """
    x2, x3, x5, x6 = x
    d = sfm_dynamics_3d((x1, x2, x3), cam, ObjectMotion((0.0, x5, x6)))
    return np.array([x2 + T * d[1], x3 + T * d[2], x5, x6])
