"""Scenario simulation, paired estimator comparison and Monte-Carlo sweeps."""

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .camera import CameraRig
from .estimators import FilterState, run_filter
from .exceptions import DivergenceError, FilterRunError
from .sdc import CameraMotion, ObjectMotion, sfm3d_system, sfm_dynamics_3d
from .uio import UIOState, check_decoupling, run_uio
from .validation import as_vector

ESTIMATORS = ("switched", "sdre", "uio")
X3_MAX = 1e6  # inverse depth of an object one micrometer from the camera plane


@dataclass(frozen=True)
class Profile:
    """Per-axis signal ``offset + amplitude * sin(frequency * t + phase)``."""

    offset: tuple = (0.0, 0.0, 0.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    frequency: tuple = (0.0, 0.0, 0.0)
    phase: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("offset", "amplitude", "frequency", "phase"):
            object.__setattr__(self, name, tuple(float(v) for v in as_vector(getattr(self, name), 3, name)))

    def sample(self, t):
        t = np.asarray(t, dtype=float).reshape(-1, 1)
        return (np.asarray(self.offset) + np.asarray(self.amplitude)
                * np.sin(np.asarray(self.frequency) * t + np.asarray(self.phase)))

    @classmethod
    def from_dict(cls, data):
        if data is None:
            return cls()
        if isinstance(data, (list, tuple)):
            return cls(offset=tuple(data))
        return cls(**{k: tuple(v) for k, v in data.items()})


@dataclass(frozen=True)
class Scenario:
    """A reproducible 3-D SFM simulation case.

    The estimators receive ``vc_scale * v_c`` while the truth uses ``v_c``.
    ``substeps`` > 1 integrates the truth on a finer grid.
    """

    duration: float = 10.0
    dt: float = 1e-3
    cam_linear: Profile = Profile((0.0, 0.0, 0.3), (1.0, 1.0, 0.0), (0.6, 0.6, 0.0), (0.0, np.pi / 2, 0.0))
    cam_angular: Profile = Profile((0.0, 0.0, 0.05))
    obj_velocity: Profile = Profile((0.0, 0.0, 0.0), (0.0, 0.0, 0.5), (0.0, 0.0, 0.4))
    x0: tuple = (0.1, 0.1, 0.1)
    x_hat0: tuple = (0.12, 0.08, 0.12)
    process_noise_std: tuple = (0.0, 0.0, 0.0)
    meas_noise_std: tuple = (0.0, 0.0)
    vc_scale: tuple = (1.0, 1.0, 1.0)
    seed: int = 0
    substeps: int = 1
    unknown_inputs: tuple = (2,)
    quantize_rig: Optional[CameraRig] = None
    name: str = "sfm3d"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration >= self.dt:
            raise ValueError("duration must be at least dt")
        for name, dim in (("x0", 3), ("x_hat0", 3), ("process_noise_std", 3),
                          ("meas_noise_std", 2), ("vc_scale", 3)):
            object.__setattr__(self, name, tuple(float(v) for v in as_vector(getattr(self, name), dim, name)))
        if min(self.vc_scale) <= 0:
            raise ValueError("vc_scale components must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be at least 1")
        object.__setattr__(self, "unknown_inputs", tuple(int(i) for i in self.unknown_inputs))

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    def times(self):
        return self.dt * np.arange(self.n_steps)

    def to_dict(self):
        d = asdict(self)
        d["quantize_rig"] = None if self.quantize_rig is None else self.quantize_rig.to_dict()
        return d


@dataclass(frozen=True)
class FilterConfig:
    """Design matrices (diagonals) and switching period shared by all estimators."""

    Q: tuple = (1e-8, 1e-8, 1e-8)
    R: tuple = (1e-3, 1e-3)
    P0: tuple = (1.0, 1.0, 0.01)
    switch_period: int = 50

    def __post_init__(self):
        for name in ("Q", "R", "P0"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if min(vals) <= 0:
                raise ValueError(f"{name} entries must be positive")
            object.__setattr__(self, name, vals)
        if int(self.switch_period) < 0:
            raise ValueError("switch_period must be non-negative")

    def matrices(self, n, p):
        def diag(v, d):
            v = np.asarray(v, dtype=float)
            return np.diag(np.full(d, v[0]) if v.size == 1 else v)
        return diag(self.Q, n), diag(self.R, p), diag(self.P0, n)


@dataclass
class TruthRun:
    """Ground truth and measurements of one scenario realization."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u_true: np.ndarray
    u_model: np.ndarray
    v_q: np.ndarray

    def measurement_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.y).tobytes()).hexdigest()


def simulate_truth(scenario):
    """Integrate the true 3-D dynamics and generate noisy measurements of (x1, x2)."""
    N = scenario.n_steps
    dt = scenario.dt
    t = scenario.times()
    vc = scenario.cam_linear.sample(t)
    om = scenario.cam_angular.sample(t)
    vq = scenario.obj_velocity.sample(t)
    rng = np.random.default_rng(scenario.seed)
    meas_noise = rng.standard_normal((N, 2)) * np.asarray(scenario.meas_noise_std)
    proc_noise = rng.standard_normal((N, 3)) * np.asarray(scenario.process_noise_std)
    sub = int(scenario.substeps)
    h = dt / sub
    x = np.empty((N, 3))
    xk = np.array(scenario.x0, dtype=float)
    for k in range(N):
        if not 0 < xk[2] < X3_MAX or not np.all(np.isfinite(xk)):
            raise DivergenceError(f"object crossed the camera plane at t={k * dt:.6f} s", k * dt)
        x[k] = xk
        if k + 1 == N:
            break
        if sub == 1:
            xk = xk + dt * _f3d(xk, vc[k], om[k], vq[k])
        else:
            for j in range(sub):
                tj = t[k] + j * h
                xk = xk + h * _f3d(xk, scenario.cam_linear.sample(tj)[0],
                                   scenario.cam_angular.sample(tj)[0],
                                   scenario.obj_velocity.sample(tj)[0])
        xk = xk + proc_noise[k]
    y = x[:, :2] + meas_noise
    if scenario.quantize_rig is not None:
        rig = scenario.quantize_rig
        y = np.column_stack([
            (np.round(rig.f_y * y[:, 0] + rig.y_0) - rig.y_0) / rig.f_y,
            (np.round(rig.f_x * y[:, 1] + rig.x_0) - rig.x_0) / rig.f_x,
        ])
    u_true = np.hstack([vc, om])
    u_model = np.hstack([vc * np.asarray(scenario.vc_scale), om])
    return TruthRun(t, x, y, u_true, u_model, vq)


def _f3d(x, vc, w, vq):
    """Inline form of :func:`sfm_dynamics_3d` used in the integration loop."""
    x1, x2, x3 = x
    om1 = w[2] * x2 - w[1] - w[1] * x1 * x1 + w[0] * x1 * x2
    om2 = -w[2] * x1 + w[0] - w[1] * x1 * x2 + w[0] * x2 * x2
    return np.array([
        om1 + (vc[2] * x1 - vc[0]) * x3 + vq[0] * x3 - x1 * vq[2] * x3,
        om2 + (vc[2] * x2 - vc[1]) * x3 + vq[1] * x3 - x2 * vq[2] * x3,
        vc[2] * x3 * x3 - (w[1] * x1 - w[0] * x2) * x3 - vq[2] * x3 * x3,
    ])


# ---------------------------------------------------------------------------
# Error statistics


@dataclass
class ErrorStats:
    """Per-state time statistics of the estimation error e = x - x̂.

    ``mean`` is the signed time mean, ``mae`` the time mean of |e|, ``var``
    the time variance, ``rms`` the root mean square over the run and
    ``steady_rms`` the root mean square over the second half of the run.
    """

    mean: np.ndarray
    mae: np.ndarray
    var: np.ndarray
    rms: np.ndarray
    steady_rms: np.ndarray
    n: int

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def error_stats(records, truth, start=0):
    """Time statistics of ``truth - estimate`` from a trace, record list or array."""
    if hasattr(records, "x_hat") and not isinstance(records, np.ndarray):
        est = np.asarray(records.x_hat, dtype=float)
    elif len(records) and hasattr(records[0], "x_hat"):
        est = np.array([r.x_hat for r in records], dtype=float)
    else:
        est = np.asarray(records, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape[0] != truth.shape[0]:
        raise ValueError(f"length mismatch: {est.shape[0]} estimates vs {truth.shape[0]} truth states")
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    e = (truth - est)[start:]
    if e.shape[0] == 0:
        raise ValueError("no samples to summarize")
    half = e[e.shape[0] // 2:]
    return ErrorStats(e.mean(axis=0), np.abs(e).mean(axis=0), e.var(axis=0),
                      np.sqrt((e ** 2).mean(axis=0)), np.sqrt((half ** 2).mean(axis=0)), e.shape[0])


# ---------------------------------------------------------------------------
# Comparisons


@dataclass
class ComparisonResult:
    truth: TruthRun
    traces: dict
    stats: dict
    measurement_hashes: dict = field(default_factory=dict)


def build_estimator_inputs(scenario, config):
    system = sfm3d_system(scenario.dt, scenario.unknown_inputs)
    Q, R, P0 = config.matrices(3, 2)
    return system, Q, R, P0


def run_estimator(name, system, truth, scenario, config):
    """Run one named estimator on a truth realization; returns an EstimateTrace."""
    Q, R, P0 = config.matrices(system.state_dim, system.output_dim)
    y = truth.y.copy()
    if name in ("switched", "sdre"):
        period = config.switch_period if name == "switched" else 0
        init = FilterState.initial(scenario.x_hat0, P0, Q, R, period)
        return run_filter(system, init, truth.u_model, y, dt=scenario.dt, truth=truth.x, name=name)
    if name == "uio":
        init = UIOState.initial(scenario.x_hat0, P0, Q, R)
        check_decoupling(system, init.x_hat, truth.u_model[0])
        return run_uio(system, init, truth.u_model, y, dt=scenario.dt, truth=truth.x, name=name)
    raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")


def run_comparison(scenario, config=None, estimators=ESTIMATORS, truth=None):
    """Feed one truth/noise realization to every estimator and summarize the errors."""
    config = FilterConfig() if config is None else config
    truth = simulate_truth(scenario) if truth is None else truth
    system = sfm3d_system(scenario.dt, scenario.unknown_inputs)
    traces, stats, hashes = {}, {}, {}
    digest = truth.measurement_hash()
    for name in estimators:
        try:
            trace = run_estimator(name, system, truth, scenario, config)
        except FilterRunError as exc:
            exc.estimator = name
            raise
        traces[name] = trace
        stats[name] = error_stats(trace, truth.x)
        hashes[name] = digest
    return ComparisonResult(truth, traces, stats, hashes)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloResult:
    """Per-run statistics, aggregates per estimator and per-time-step curves."""

    scales: np.ndarray
    run_stats: list
    failures: list
    aggregate: dict
    curves: dict
    estimators: tuple

    @property
    def n_ok(self):
        return sum(1 for s in self.run_stats if s is not None)

    def summary(self):
        return {
            "runs": len(self.run_stats),
            "ok": self.n_ok,
            "failed": len(self.failures),
            "failures": self.failures,
            "aggregate": {k: {kk: vv.tolist() for kk, vv in v.items()} for k, v in self.aggregate.items()},
        }


def run_scale(scenario, seed, index, vc_range):
    """Camera-velocity scale of Monte-Carlo run ``index``: each axis uniform in ``vc_range``."""
    rng = np.random.default_rng([seed + index, 0x5CA1E])
    lo, hi = vc_range
    return rng.uniform(lo, hi, 3) if hi > lo else np.full(3, float(lo))


def _mc_run(args):
    scenario, config, estimators, keep_curves = args
    try:
        res = run_comparison(scenario, config, estimators)
    except (FilterRunError, DivergenceError, ArithmeticError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}", None
    curves = {k: res.traces[k].errors for k in estimators} if keep_curves else None
    return res.stats, None, curves


def monte_carlo(template, n_runs=100, vc_range=(0.5, 1.5), config=None, estimators=ESTIMATORS,
                seed=None, workers=1, curves=True):
    """Sweep the camera-velocity uncertainty.

    Run ``i`` uses noise seed ``seed + i`` and draws each camera-velocity axis
    scale independently from ``vc_range``. Failed runs are counted and
    excluded from the aggregates.
    """
    n_runs = int(n_runs)
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    lo, hi = (float(v) for v in vc_range)
    if not 0 < lo <= hi:
        raise ValueError("vc_range must satisfy 0 < low <= high")
    config = FilterConfig() if config is None else config
    seed = template.seed if seed is None else int(seed)
    scales = np.array([run_scale(template, seed, i, (lo, hi)) for i in range(n_runs)])
    jobs = [(replace(template, seed=seed + i, vc_scale=tuple(scales[i])), config, tuple(estimators), curves)
            for i in range(n_runs)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_mc_run, jobs))
    else:
        outcomes = [_mc_run(j) for j in jobs]

    run_stats, failures = [], []
    sums = {k: None for k in estimators}
    sq = {k: None for k in estimators}
    for i, (stats, err, cur) in enumerate(outcomes):
        run_stats.append(stats)
        if stats is None:
            failures.append({"run": i, "error": err})
            continue
        if cur is not None:
            for k in estimators:
                if sums[k] is None:
                    sums[k] = np.zeros_like(cur[k])
                    sq[k] = np.zeros_like(cur[k])
                sums[k] += cur[k]
                sq[k] += cur[k] ** 2
    ok = [s for s in run_stats if s is not None]
    aggregate = {}
    for k in estimators:
        if not ok:
            aggregate[k] = {}
            continue
        aggregate[k] = {
            "mean_of_means": np.mean([s[k].mean for s in ok], axis=0),
            "mean_of_mae": np.mean([s[k].mae for s in ok], axis=0),
            "mean_of_vars": np.mean([s[k].var for s in ok], axis=0),
            "mean_of_rms": np.mean([s[k].rms for s in ok], axis=0),
            "runs": np.array(len(ok)),
        }
    curve_out = {}
    if curves and ok:
        for k in estimators:
            m = sums[k] / len(ok)
            curve_out[k] = {"mean": m, "var": np.maximum(sq[k] / len(ok) - m ** 2, 0.0)}
    return MonteCarloResult(scales, run_stats, failures, aggregate, curve_out, tuple(estimators))


# ---------------------------------------------------------------------------
# Output writers

STATE_NAMES = ("x1", "x2", "x3")


def _fmt(v):
    return repr(float(v))


def write_aggregate_csv(path, result):
    """Write ``estimator,state,mean_err,var_err,runs``.

    ``mean_err`` is the run average of the per-run mean absolute error and
    ``var_err`` the run average of the per-run error variance.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "state", "mean_err", "var_err", "runs"])
        for k in result.estimators:
            agg = result.aggregate.get(k)
            if not agg:
                continue
            for i, s in enumerate(STATE_NAMES):
                w.writerow([k, s, _fmt(agg["mean_of_mae"][i]), _fmt(agg["mean_of_vars"][i]), int(agg["runs"])])


def write_curves_csv(path, result, stride=1):
    """Per-time-step across-run mean and variance of the error for each estimator."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["step"]
        for k in result.estimators:
            header += [f"{k}_mean_{s}" for s in STATE_NAMES] + [f"{k}_var_{s}" for s in STATE_NAMES]
        w.writerow(header)
        if not result.curves:
            return
        N = result.curves[result.estimators[0]]["mean"].shape[0]
        for t in range(0, N, stride):
            row = [t]
            for k in result.estimators:
                row += [_fmt(v) for v in result.curves[k]["mean"][t]] + [_fmt(v) for v in result.curves[k]["var"][t]]
            w.writerow(row)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def comparison_summary(result, scenario, config):
    return {
        "scenario": scenario.to_dict(),
        "filter": asdict(config),
        "measurement_sha256": result.truth.measurement_hash(),
        "stats": {k: v.to_dict() for k, v in result.stats.items()},
    }


def write_comparison(out_dir, result, scenario, config):
    os.makedirs(out_dir, exist_ok=True)
    for name, trace in result.traces.items():
        trace.to_csv(os.path.join(out_dir, f"trace_{name}.csv"))
    with open(os.path.join(out_dir, "truth.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x1", "x2", "x3", "y1", "y2"])
        for k in range(result.truth.x.shape[0]):
            w.writerow([_fmt(result.truth.t[k])] + [_fmt(v) for v in result.truth.x[k]]
                       + [_fmt(v) for v in result.truth.y[k]])
    write_json(os.path.join(out_dir, "summary.json"), comparison_summary(result, scenario, config))
