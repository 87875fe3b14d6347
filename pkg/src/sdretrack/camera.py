"""Camera geometry and observation models.

Covers the pinhole projection, the ground-plane intercept relation between depth
and image row, the geometric output map of the reduced vehicle model and the
empirically calibrated pixel model (two-exponential depth map, linear lateral map).
"""

import csv
from dataclasses import asdict, dataclass

import numpy as np
import yaml
from scipy.optimize import brentq, least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CalibrationError, CalibrationRangeError, DomainError


@dataclass(frozen=True)
class CameraRig:
    """Pinhole intrinsics plus the mounting geometry used by the intercept relation.

    f_x, f_y, x_0, y_0 and VP are in pixels; F, H and h_f in meters; h in pixels.
    """

    f_x: float = 900.0
    f_y: float = 900.0
    x_0: float = 640.0
    y_0: float = 360.0
    F: float = 0.006
    H: float = 1.5
    h: float = 720.0
    h_f: float = 0.0048
    VP: float = 360.0

    def __post_init__(self):
        for name in ("f_x", "f_y", "F", "H", "h", "h_f"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not np.isclose(self.f_x, self.f_y, rtol=1e-9, atol=0.0):
            raise ValueError(f"f_x and f_y must be equal, got {self.f_x} and {self.f_y}")

    def intrinsic_matrix(self):
        return np.array([[self.f_x, 0.0, self.x_0], [0.0, self.f_y, self.y_0], [0.0, 0.0, 1.0]])

    @classmethod
    def from_dict(cls, data):
        known = {k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown camera rig keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self):
        return asdict(self)


def project_to_pixels(x, rig):
    """Pixel coordinates ``(u, v)`` of the 3-D state (X/Z, Y/Z, 1/Z)."""
    x1, x2, x3 = np.asarray(x, dtype=float)
    if not x3 > 0:
        raise DomainError(f"inverse depth must be positive, got {x3}")
    u, v, _ = rig.intrinsic_matrix() @ np.array([x2, x1, 1.0])
    return float(u), float(v)


def pixels_to_ratios(u, v, rig):
    """Invert the intrinsics: return ``(x1, x2)`` for pixel ``(u, v)``."""
    x2 = (u - rig.x_0) / rig.f_x
    x1 = (v - rig.y_0) / rig.f_y
    return x1, x2


def intercept_depth_to_pixel(Z, rig):
    """Vertical sensor coordinate (meters) of a ground point at depth ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if np.any(~(Z > 0)):
        raise DomainError("depth must be positive")
    return rig.F * rig.H / Z


def intercept_pixel_to_depth(Y_tilde, rig):
    """Inverse of :func:`intercept_depth_to_pixel`."""
    Y_tilde = np.asarray(Y_tilde, dtype=float)
    if np.any(~(Y_tilde > 0)):
        raise DomainError("sensor coordinate must be positive (point below the horizon)")
    return rig.F * rig.H / Y_tilde


def intercept_depth_to_row(Z, rig):
    """Image row (pixels) of a ground point at depth ``Z``, offset by the vanishing point."""
    return intercept_depth_to_pixel(Z, rig) * (rig.h / rig.h_f) + rig.VP


def intercept_row_to_depth(row, rig):
    row = np.asarray(row, dtype=float)
    return intercept_pixel_to_depth((row - rig.VP) * (rig.h_f / rig.h), rig)


def observation_model_geometric(x, rig):
    """Output pair of the reduced model from the intercept relation.

    Returns ``[x2, ((F H x3) h/h_f - y_0) / f_y]``.
    """
    x2, x3 = float(x[0]), float(x[1])
    if not x3 > 0:
        raise DomainError(f"inverse depth must be positive, got {x3}")
    return np.array([x2, ((rig.F * rig.H * x3) * (rig.h / rig.h_f) - rig.y_0) / rig.f_y])


def geometric_output(rig):
    """Linear output form ``y = C x + offset`` of :func:`observation_model_geometric`."""
    gain = rig.F * rig.H * rig.h / (rig.h_f * rig.f_y)
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, gain, 0.0, 0.0]])
    offset = np.array([0.0, -rig.y_0 / rig.f_y])
    return C, offset


DEFAULT_DEPTH_COEFFS = (588.0, -0.161, 382.6, -0.002547)
DEFAULT_LATERAL_COEFFS = (-1214.0, 673.6)


class CalibratedOutputModel(RegressorMixin, BaseEstimator):
    """Empirical pixel model of the ground contact point.

    row = c1 exp(r1 Z) + c2 exp(r2 Z)       (Z = 1/x3, meters)
    col = slope * x2 + intercept

    The constructor coefficients are used until :meth:`fit` is called, after
    which the fitted ``exp2_params_`` and ``linear_params_`` take over.
    The lateral intercept is treated as a measurement offset: filters see
    ``col - intercept`` and the output matrix has no constant term.
    """

    def __init__(self, c1=588.0, r1=-0.161, c2=382.6, r2=-0.002547,
                 slope=-1214.0, intercept=673.6, depth_min=1.0, depth_max=100.0):
        self.c1 = c1
        self.r1 = r1
        self.c2 = c2
        self.r2 = r2
        self.slope = slope
        self.intercept = intercept
        self.depth_min = depth_min
        self.depth_max = depth_max

    # -- active coefficients -------------------------------------------------
    @property
    def exp2_params(self):
        if hasattr(self, "exp2_params_"):
            return self.exp2_params_
        return (float(self.c1), float(self.r1), float(self.c2), float(self.r2))

    @property
    def linear_params(self):
        if hasattr(self, "linear_params_"):
            return self.linear_params_
        return (float(self.slope), float(self.intercept))

    # -- forward maps --------------------------------------------------------
    def row_from_depth(self, Z, check_range=True):
        Z = np.asarray(Z, dtype=float)
        if check_range:
            self._check_depth(Z)
        c1, r1, c2, r2 = self.exp2_params
        return c1 * np.exp(r1 * Z) + c2 * np.exp(r2 * Z)

    def row_slope(self, Z):
        """Derivative of the row map with respect to depth."""
        c1, r1, c2, r2 = self.exp2_params
        return c1 * r1 * np.exp(r1 * Z) + c2 * r2 * np.exp(r2 * Z)

    def col_from_ratio(self, ratio):
        slope, intercept = self.linear_params
        return slope * np.asarray(ratio, dtype=float) + intercept

    def observe(self, x):
        """Offset-corrected measurement pair ``(slope * x2, row)`` for reduced state ``x``."""
        x2, x3 = float(x[0]), float(x[1])
        if not x3 > 0:
            raise DomainError(f"inverse depth must be positive, got {x3}")
        return np.array([self.linear_params[0] * x2, float(self.row_from_depth(1.0 / x3))])

    def output_matrix(self, x):
        """State-dependent output matrix with the constant lateral term removed."""
        x3 = float(x[1])
        if not x3 > 0:
            raise DomainError(f"inverse depth must be positive, got {x3}")
        row = float(self.row_from_depth(1.0 / x3, check_range=False))
        return np.array([[self.linear_params[0], 0.0, 0.0, 0.0], [0.0, row / x3, 0.0, 0.0]])

    def output_map(self):
        """``C(x, u)`` callable for a reduced-model :class:`SdcSystem`.

        Positivity of x3 is enforced by clipping to a tiny floor so that a
        transiently poor estimate does not abort the filter.
        """
        c1, r1, c2, r2 = self.exp2_params
        slope = self.linear_params[0]

        def C(x, u):
            x3 = max(float(x[1]), 1e-6)
            Z = 1.0 / x3
            row = c1 * np.exp(r1 * Z) + c2 * np.exp(r2 * Z)
            return np.array([[slope, 0.0, 0.0, 0.0], [0.0, row / x3, 0.0, 0.0]])

        return C

    # -- inverse maps --------------------------------------------------------
    def depth_from_row(self, row):
        """Depth whose modelled row equals ``row``; raises outside the calibrated span."""
        row = float(row)
        lo, hi = float(self.depth_min), float(self.depth_max)
        f_lo = float(self.row_from_depth(lo, check_range=False)) - row
        f_hi = float(self.row_from_depth(hi, check_range=False)) - row
        if f_lo * f_hi > 0:
            raise CalibrationRangeError(f"row {row:.3f} outside calibrated span [{lo}, {hi}] m")
        if f_lo == 0:
            return lo
        if f_hi == 0:
            return hi
        return brentq(lambda z: float(self.row_from_depth(z, check_range=False)) - row,
                      lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)

    def ratio_from_col(self, col):
        slope, intercept = self.linear_params
        return (np.asarray(col, dtype=float) - intercept) / slope

    def state_from_pixels(self, col, row):
        """Reduced-state components ``(x2, x3)`` from a contact-point pixel."""
        Z = self.depth_from_row(row)
        return float(self.ratio_from_col(col)), 1.0 / Z

    def _check_depth(self, Z):
        lo, hi = float(self.depth_min), float(self.depth_max)
        if np.any((Z < lo * (1 - 1e-12)) | (Z > hi * (1 + 1e-12))):
            raise CalibrationRangeError(f"depth outside calibrated span [{lo}, {hi}] m")

    def is_monotone(self, n=2000):
        """True if the depth map is strictly decreasing over the calibrated span."""
        Z = np.linspace(self.depth_min, self.depth_max, n)
        return bool(np.all(np.diff(self.row_from_depth(Z)) < 0))

    # -- estimator API -------------------------------------------------------
    def fit(self, X, y):
        """Fit both maps from samples.

        ``X`` columns are (depth m, lateral ratio); ``y`` columns are
        (pixel row, pixel column).
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2 or y.shape != X.shape:
            raise ValueError("X and y must both have shape (n_samples, 2)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("samples contain non-finite values")
        depth, ratio = X[:, 0], X[:, 1]
        row, col = y[:, 0], y[:, 1]
        if X.shape[0] < 8:
            raise ValueError(f"at least 8 samples are required, got {X.shape[0]}")
        if np.any(depth <= 0) or depth.max() < 2.0 * depth.min():
            raise ValueError("samples must have positive depths spanning at least a 2:1 ratio")
        if np.ptp(row) == 0:
            raise ValueError("degenerate samples: pixel rows are constant")
        if np.ptp(ratio) == 0 or np.ptp(col) == 0:
            raise ValueError("degenerate samples: lateral ratios or columns are constant")

        design = np.column_stack([ratio, np.ones_like(ratio)])
        (slope, intercept), *_ = np.linalg.lstsq(design, col, rcond=None)
        col_res = col - (slope * ratio + intercept)

        params, trace = _fit_two_exponentials(depth, row)
        c1, r1, c2, r2 = params
        row_res = row - (c1 * np.exp(r1 * depth) + c2 * np.exp(r2 * depth))

        self.exp2_params_ = tuple(float(v) for v in params)
        self.linear_params_ = (float(slope), float(intercept))
        self.row_rms_ = float(np.sqrt(np.mean(row_res ** 2)))
        self.col_rms_ = float(np.sqrt(np.mean(col_res ** 2)))
        self.n_evaluations_ = len(trace)
        self.sample_depth_range_ = (float(depth.min()), float(depth.max()))
        return self

    def predict(self, X):
        """Predicted (row, col) for rows of ``X`` = (depth, lateral ratio)."""
        X = np.asarray(X, dtype=float)
        return np.column_stack([self.row_from_depth(X[:, 0], check_range=False),
                                self.col_from_ratio(X[:, 1])])

    def score(self, X, y, sample_weight=None):
        """Negative RMS pixel error over both coordinates."""
        resid = self.predict(X) - np.asarray(y, dtype=float)
        return -float(np.sqrt(np.mean(resid ** 2)))

    def to_dict(self):
        c1, r1, c2, r2 = self.exp2_params
        slope, intercept = self.linear_params
        return {"c1": c1, "r1": r1, "c2": c2, "r2": r2, "slope": slope, "intercept": intercept,
                "depth_min": float(self.depth_min), "depth_max": float(self.depth_max)}


def _fit_two_exponentials(depth, row):
    """Nonlinear least squares for ``c1 exp(r1 Z) + c2 exp(r2 Z)``.

    Initial values come from a log-linear fit of the far half of the samples
    (slow component) followed by a log-linear fit of the near residual (fast
    component).
    """
    order = np.argsort(depth)
    Z, r = depth[order], row[order]
    far = Z >= np.median(Z)
    if np.all(r[far] > 0):
        slow_r, slow_logc = np.polyfit(Z[far], np.log(r[far]), 1)
    else:
        slow_r, slow_logc = -1.0 / Z.max(), np.log(max(np.abs(r).max(), 1.0))
    slow = np.exp(slow_logc) * np.exp(slow_r * Z)
    resid = r - slow
    near = (~far) & (resid > 0)
    if near.sum() >= 2:
        fast_r, fast_logc = np.polyfit(Z[near], np.log(resid[near]), 1)
        fast_r = min(fast_r, 2.0 * slow_r) if slow_r < 0 else fast_r
    else:
        fast_r, fast_logc = 5.0 * slow_r, np.log(max(np.abs(resid).max(), 1e-3))
    p0 = np.array([np.exp(fast_logc), fast_r, np.exp(slow_logc), slow_r])

    trace = []

    def residual(p):
        c1, r1, c2, r2 = p
        with np.errstate(over="ignore", invalid="ignore"):
            res = c1 * np.exp(r1 * Z) + c2 * np.exp(r2 * Z) - r
        if not np.all(np.isfinite(res)):
            res = np.full_like(r, 1e12)
        trace.append(float(0.5 * res @ res))
        return res

    def jac(p):
        c1, r1, c2, r2 = p
        e1, e2 = np.exp(r1 * Z), np.exp(r2 * Z)
        return np.column_stack([e1, c1 * Z * e1, e2, c2 * Z * e2])

    try:
        sol = least_squares(residual, p0, jac=jac, method="lm", x_scale="jac",
                            ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=20000)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise CalibrationError(f"two-exponential fit failed: {exc}", trace) from exc
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise CalibrationError(f"two-exponential fit did not converge: {sol.message}", trace)
    c1, r1, c2, r2 = sol.x
    if r1 > r2:  # report the fast component first
        c1, r1, c2, r2 = c2, r2, c1, r1
    return np.array([c1, r1, c2, r2]), trace


def observation_model_calibrated(x, model):
    """Raw contact-point pixel pair ``(col, row)`` of reduced state ``x``.

    Raises :class:`CalibrationRangeError` when 1/x3 lies outside the calibrated
    depth span. Filters consume ``model.observe(x)``, the offset-corrected pair.
    """
    x2, x3 = float(x[0]), float(x[1])
    if not x3 > 0:
        raise DomainError(f"inverse depth must be positive, got {x3}")
    return np.array([float(model.col_from_ratio(x2)), float(model.row_from_depth(1.0 / x3))])


def fit_calibrated_model(samples, **kwargs):
    """Fit a :class:`CalibratedOutputModel` from rows of
    ``(depth m, lateral ratio, pixel row, pixel column)``."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("samples must have four columns: depth, ratio, row, col")
    return CalibratedOutputModel(**kwargs).fit(arr[:, :2], arr[:, 2:])


# -- file interfaces --------------------------------------------------------

def load_yaml(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return {} if data is None else data


def load_rig(path):
    """Load a :class:`CameraRig` from a YAML mapping (optionally nested under ``rig``)."""
    data = load_yaml(path)
    return CameraRig.from_dict(data.get("rig", data))


def load_calibrated_model(path):
    """Load a :class:`CalibratedOutputModel` from a YAML mapping (optionally under ``model``)."""
    data = load_yaml(path)
    data = data.get("model", data)
    allowed = {"c1", "r1", "c2", "r2", "slope", "intercept", "depth_min", "depth_max"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown calibrated-model keys: {sorted(unknown)}")
    return CalibratedOutputModel(**{k: float(v) for k, v in data.items()})


CALIBRATION_HEADER = ["depth_m", "lateral_ratio", "pixel_row", "pixel_col"]


def load_calibration_samples(path):
    """Read calibration samples from CSV with header ``depth_m,lateral_ratio,pixel_row,pixel_col``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CALIBRATION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CALIBRATION_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {rec}") from None
            if len(rows[-1]) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(rows[-1])}")
    return np.array(rows).reshape(-1, 4)
