"""Offline multi-object tracking from detection files.

Detections are converted to contact-point observations, each object gets its
own filter worker on the reduced vehicle model, and the resulting distance
estimates are scored against radar ground truth.
"""

import csv
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .camera import CalibratedOutputModel, CameraRig
from .estimators import FilterState, filter_step
from .exceptions import CalibrationRangeError
from .sdc import reduced_vehicle_system

SOURCES = ("detector", "tracker")
DETECTION_HEADER = ["frame", "timestamp", "object_id", "left", "top", "width", "height", "source"]
EGO_HEADER = ["timestamp", "vcx", "vcy", "vcz", "wx", "wy", "wz"]
RADAR_HEADER = ["timestamp", "object_id", "longitudinal_m", "lateral_m"]
RANGE_BINS = ((0.0, 50.0), (50.0, 70.0), (70.0, 100.0))


@dataclass(frozen=True)
class Detection:
    frame_index: int
    timestamp: float
    object_id: int
    bbox: tuple
    source: str = "detector"

    def __post_init__(self):
        left, top, width, height = (float(v) for v in self.bbox)
        if not (width > 0 and height > 0):
            raise ValueError(f"bbox width and height must be positive, got {self.bbox}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        object.__setattr__(self, "bbox", (left, top, width, height))

    def within(self, image_size):
        left, top, width, height = self.bbox
        w, h = image_size
        return left >= 0 and top >= 0 and left + width <= w and top + height <= h


@dataclass(frozen=True)
class RadarTruth:
    timestamp: float
    object_id: int
    longitudinal: float
    lateral: float

    def __post_init__(self):
        if not self.longitudinal > 0:
            raise ValueError(f"longitudinal distance must be positive, got {self.longitudinal}")


@dataclass(frozen=True)
class EgoMotion:
    """Time series of camera velocities, held constant between samples."""

    t: np.ndarray
    v_c: np.ndarray
    omega: np.ndarray

    def at(self, t):
        if t < self.t[0] - 1e-9 or t > self.t[-1] + 1e-9:
            raise ValueError(f"ego-motion does not cover t={t:.6f}")
        k = int(np.searchsorted(self.t, t + 1e-9, side="right")) - 1
        k = min(max(k, 0), self.t.shape[0] - 1)
        return np.concatenate([self.v_c[k], self.omega[k]])

    def covers(self, t0, t1):
        return self.t[0] <= t0 + 1e-9 and self.t[-1] >= t1 - 1e-9


def image_size(rig):
    """Image width and height in pixels implied by the principal point and sensor height."""
    return 2.0 * rig.x_0, rig.h


def contact_point(d):
    """Bottom-center of the bounding box."""
    left, top, width, height = d.bbox
    return left + width / 2.0, top + height


def pixels_to_observation(p, rig, model):
    """Filter measurement ``(col - intercept, row)`` for a contact-point pixel.

    Raises :class:`CalibrationRangeError` when the pixel is outside the image
    or the row lies outside the calibrated depth span.
    """
    col, row = float(p[0]), float(p[1])
    if rig is not None:
        w, h = image_size(rig)
        if not (0 <= col <= w and 0 <= row <= h):
            raise CalibrationRangeError(f"pixel ({col:.1f}, {row:.1f}) outside the image")
    lo = float(model.row_from_depth(model.depth_max, check_range=False))
    hi = float(model.row_from_depth(model.depth_min, check_range=False))
    if not lo <= row <= hi:
        raise CalibrationRangeError(f"row {row:.2f} outside calibrated span [{lo:.2f}, {hi:.2f}]")
    return np.array([col - model.linear_params[1], row])


def observation_to_state(obs, model):
    """Invert a measurement to reduced-state components ``(x2, x3)``."""
    x2 = obs[0] / model.linear_params[0]
    return x2, 1.0 / model.depth_from_row(obs[1])


# ---------------------------------------------------------------------------
# File ingestion


def _read_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return []
        if [h.strip() for h in first] != header:
            raise ValueError(f"{path}:1: expected header {','.join(header)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append((lineno, [f.strip() for f in rec]))
        return rows


def ingest_detections(path, image_bounds=None):
    """Read detections grouped by object and ordered by timestamp.

    Rows within one object must have increasing timestamps; missed frames are
    kept as gaps.
    """
    streams = defaultdict(list)
    for lineno, rec in _read_csv(path, DETECTION_HEADER):
        try:
            d = Detection(int(rec[0]), float(rec[1]), int(rec[2]),
                          (float(rec[3]), float(rec[4]), float(rec[5]), float(rec[6])), rec[7])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed detection row: {exc}") from None
        if not math.isfinite(d.timestamp):
            raise ValueError(f"{path}:{lineno}: non-finite timestamp")
        if image_bounds is not None and not d.within(image_bounds):
            raise ValueError(f"{path}:{lineno}: bbox outside image bounds")
        stream = streams[d.object_id]
        if stream and d.timestamp <= stream[-1].timestamp:
            raise ValueError(f"{path}:{lineno}: out-of-order timestamp for object {d.object_id}")
        stream.append(d)
    return dict(sorted(streams.items()))


def load_ego_motion(path):
    rows = _read_csv(path, EGO_HEADER)
    if not rows:
        raise ValueError(f"{path}: no ego-motion samples")
    try:
        data = np.array([[float(v) for v in rec] for _, rec in rows])
    except ValueError:
        raise ValueError(f"{path}: malformed ego-motion row") from None
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ValueError(f"{path}: ego-motion timestamps must increase")
    return EgoMotion(data[:, 0], data[:, 1:4], data[:, 4:7])


def load_radar(path):
    out = []
    for lineno, rec in _read_csv(path, RADAR_HEADER):
        try:
            out.append(RadarTruth(float(rec[0]), int(rec[1]), float(rec[2]), float(rec[3])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed radar row: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Tracking


@dataclass(frozen=True)
class TrackerConfig:
    """Per-object filter design for the reduced vehicle model.

    Q, P0 are diagonals over (x2, x3, Vq2, Vq3); R over (offset-corrected
    column, row) in squared pixels. The x3 entry of ``P0`` is a relative
    variance, scaled by the square of the initial inverse depth.
    """

    dt: float = 1.0 / 30.0
    Q: tuple = (1e-7, 1e-8, 0.05, 0.05)
    R: tuple = (4.0, 4.0)
    P0: tuple = (1e-4, 2.5e-3, 25.0, 25.0)
    switch_period: int = 0
    tracker_r_scale: float = 4.0
    max_missed: int = 30
    x1: float = 0.0
    parameterization: str = "euler"

    def __post_init__(self):
        for name in ("Q", "R", "P0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class TrackResult:
    object_id: int
    t: np.ndarray
    longitudinal: np.ndarray
    lateral: np.ndarray
    x_hat: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    updated: np.ndarray
    status: str = "ok"
    message: str = ""
    dropped: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "object_id", "longitudinal_m", "lateral_m", "x2", "x3", "vq2", "vq3",
                        "p_min", "p_max", "updated"])
            for k in range(self.t.shape[0]):
                w.writerow([repr(float(self.t[k])), self.object_id, repr(float(self.longitudinal[k])),
                            repr(float(self.lateral[k]))] + [repr(float(v)) for v in self.x_hat[k]]
                           + [repr(float(self.p_min[k])), repr(float(self.p_max[k])), int(self.updated[k])])


def _empty_result(object_id, status="ok", message=""):
    z = np.zeros(0)
    return TrackResult(object_id, z, z, z, np.zeros((0, 4)), z, z, np.zeros(0, dtype=bool), status, message)


def track_object(stream, ego, rig, model, config=None):
    """Run one filter worker over a single object's detections.

    The filter advances on a fixed grid of ``config.dt``; grid steps carrying
    a detection perform a measurement update, others predict only.
    """
    config = TrackerConfig() if config is None else config
    if not stream:
        raise ValueError("empty detection stream")
    object_id = stream[0].object_id
    t0, t1 = stream[0].timestamp, stream[-1].timestamp
    if not ego.covers(t0, t1):
        raise ValueError(f"ego-motion does not cover [{t0}, {t1}] for object {object_id}")
    system = reduced_vehicle_system(config.dt, C=model.output_map(), x1=config.x1,
                                    parameterization=config.parameterization)

    obs_by_step = {}
    dropped = 0
    for d in stream:
        try:
            obs = pixels_to_observation(contact_point(d), rig, model)
        except CalibrationRangeError:
            dropped += 1
            continue
        k = int(round((d.timestamp - t0) / config.dt))
        obs_by_step[k] = (obs, d.source)
    if not obs_by_step:
        res = _empty_result(object_id, "no-observations", "all observations outside calibration")
        res.dropped = dropped
        return res

    k_first = min(obs_by_step)
    x2, x3 = observation_to_state(obs_by_step[k_first][0], model)
    P0 = np.diag(config.P0) * np.diag([1.0, x3 * x3, 1.0, 1.0])
    R = np.diag(config.R)
    R_tracker = R * config.tracker_r_scale
    state = FilterState.initial((x2, x3, 0.0, 0.0), P0, np.diag(config.Q), R, config.switch_period)
    k_last = int(round((t1 - t0) / config.dt))
    ts, xs, pmin, pmax, upd = [], [], [], [], []
    missed = 0
    status, message = "ok", ""
    for k in range(k_first, k_last + 1):
        t = t0 + k * config.dt
        u = ego.at(t)
        entry = obs_by_step.get(k)
        if entry is None:
            y = None
            missed += 1
            if missed > config.max_missed:
                status, message = "terminated", f"{config.max_missed} consecutive missed frames at t={t:.3f}"
                break
        else:
            y, source = entry
            missed = 0
            state.R = R_tracker if source == "tracker" else R
        try:
            state, report = filter_step(state, system, u, y)
        except (ArithmeticError, ValueError) as exc:
            status, message = "failed", f"filter error at t={t:.3f}: {exc}"
            break
        if not state.x_hat[1] > 0:
            status, message = "aborted", f"inverse-depth estimate became non-positive at t={t:.3f}"
            break
        ev = np.linalg.eigvalsh(state.P)
        ts.append(t + config.dt)
        xs.append(state.x_hat.copy())
        pmin.append(ev[0])
        pmax.append(ev[-1])
        upd.append(y is not None)
    xs = np.array(xs).reshape(-1, 4)
    return TrackResult(object_id, np.array(ts), 1.0 / xs[:, 1], xs[:, 0] / xs[:, 1], xs,
                       np.array(pmin), np.array(pmax), np.array(upd, dtype=bool), status, message, dropped)


def track_objects(streams, ego, rig, model, config=None, workers=None):
    """One worker per object; failures stay confined to their own track."""
    config = TrackerConfig() if config is None else config

    def work(item):
        oid, stream = item
        try:
            return oid, track_object(stream, ego, rig, model, config)
        except Exception as exc:  # isolate any worker failure
            return oid, _empty_result(oid, "failed", f"{type(exc).__name__}: {exc}")

    items = sorted(streams.items())
    if not items:
        return {}
    with ThreadPoolExecutor(max_workers=workers or len(items)) as pool:
        results = dict(pool.map(work, items))
    return {oid: results[oid] for oid, _ in items}


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class RangeBin:
    low: float
    high: float
    count: int = 0
    mean_rel_long: float = float("nan")
    max_rel_long: float = float("nan")
    mean_lat_signed: float = float("nan")
    mean_lat_abs: float = float("nan")


@dataclass
class Evaluation:
    bins: list
    matched: int
    unmatched: int
    overall_lat_signed: float
    overall_rel_long: float
    pairs: list = field(default_factory=list)

    def to_dict(self):
        return {"bins": [asdict(b) for b in self.bins], "matched": self.matched,
                "unmatched": self.unmatched, "overall_lat_signed": self.overall_lat_signed,
                "overall_rel_long": self.overall_rel_long}


def associate(results, truth, tolerance):
    """Nearest-timestamp pairs ``(object_id, t, est_long, est_lat, true_long, true_lat)``."""
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    by_obj = defaultdict(list)
    for r in truth:
        by_obj[r.object_id].append(r)
    pairs, unmatched = [], 0
    for oid, res in sorted(results.items()):
        refs = sorted(by_obj.get(oid, []), key=lambda r: r.timestamp)
        rt = np.array([r.timestamp for r in refs])
        for k in range(res.t.shape[0]):
            if rt.size == 0:
                unmatched += 1
                continue
            j = int(np.searchsorted(rt, res.t[k]))
            cand = [i for i in (j - 1, j) if 0 <= i < rt.size]
            i = min(cand, key=lambda i: (abs(rt[i] - res.t[k]), i))
            if abs(rt[i] - res.t[k]) > tolerance:
                unmatched += 1
                continue
            pairs.append((oid, float(res.t[k]), float(res.longitudinal[k]), float(res.lateral[k]),
                          refs[i].longitudinal, refs[i].lateral))
    return pairs, unmatched


def evaluate_against_radar(results, truth, tolerance, bins=RANGE_BINS):
    """Bin relative longitudinal and lateral errors by true range."""
    pairs, unmatched = associate(results, truth, tolerance)
    arr = np.array([p[2:] for p in pairs]).reshape(-1, 4)
    rel = np.abs(arr[:, 0] - arr[:, 2]) / arr[:, 2]
    lat = arr[:, 1] - arr[:, 3]
    out = []
    for lo, hi in bins:
        sel = (arr[:, 2] >= lo) & (arr[:, 2] < hi)
        b = RangeBin(lo, hi, int(sel.sum()))
        if b.count:
            b.mean_rel_long = float(rel[sel].mean())
            b.max_rel_long = float(rel[sel].max())
            b.mean_lat_signed = float(lat[sel].mean())
            b.mean_lat_abs = float(np.abs(lat[sel]).mean())
        out.append(b)
    return Evaluation(out, len(pairs), unmatched,
                      float(lat.mean()) if lat.size else float("nan"),
                      float(rel.mean()) if rel.size else float("nan"), pairs)


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SyntheticObject:
    """Object moving at constant velocity relative to a straight-driving camera."""

    object_id: int = 1
    Z0: float = 95.0
    Y0: float = 2.5
    vq2: float = 0.0
    vq3: float = 15.0
    width_m: float = 1.8
    height_m: float = 1.5


def simulate_scene(objects, duration, fps=30.0, v_c=(0.0, 0.0, 20.0), omega=(0.0, 0.0, 0.0),
                   model=None, rig=None, redetect_every=5, gaps=(), seed=0, jitter_px=0.0):
    """Generate detections, ego-motion and radar truth for synthetic objects.

    Positions follow dY = vq2 - vc2 + w1 Z and dZ = vq3 - vc3 - w1 Y (Euler at
    a 10x finer step). Contact pixels come from the calibrated model and are
    rounded to integers; ``gaps`` lists ``(object_id, first_frame, n_frames)``
    without detections.
    """
    model = CalibratedOutputModel() if model is None else model
    rig = CameraRig() if rig is None else rig
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration * fps))
    dt = 1.0 / fps
    sub = 10
    vc = np.asarray(v_c, dtype=float)
    om = np.asarray(omega, dtype=float)
    ego = [(k * dt, *vc, *om) for k in range(n_frames + 1)]
    dets, radar = [], []
    gap_frames = defaultdict(set)
    for oid, first, length in gaps:
        gap_frames[oid].update(range(first, first + length))
    for obj in objects:
        Y, Z = obj.Y0, obj.Z0
        for k in range(n_frames):
            t = k * dt
            if Z <= model.depth_min or Z >= model.depth_max:
                pass
            else:
                radar.append((t, obj.object_id, Z, Y))
                if k not in gap_frames[obj.object_id]:
                    col = model.col_from_ratio(Y / Z) + (rng.normal(0, jitter_px) if jitter_px else 0.0)
                    row = float(model.row_from_depth(Z)) + (rng.normal(0, jitter_px) if jitter_px else 0.0)
                    w_px = max(2.0, 2.0 * round(rig.f_x * obj.width_m / Z / 2.0))
                    h_px = max(1.0, float(round(rig.f_y * obj.height_m / Z)))
                    left = round(col) - w_px / 2.0
                    top = round(row) - h_px
                    source = "detector" if (redetect_every <= 1 or k % redetect_every == 0) else "tracker"
                    dets.append((k, t, obj.object_id, left, top, w_px, h_px, source))
            for _ in range(sub):
                h = dt / sub
                dY = obj.vq2 - vc[1] + om[0] * Z
                dZ = obj.vq3 - vc[2] - om[0] * Y
                Y, Z = Y + h * dY, Z + h * dZ
    dets.sort(key=lambda d: (d[1], d[2]))
    radar.sort(key=lambda r: (r[0], r[1]))
    return dets, ego, radar


def write_scene(out_dir, dets, ego, radar):
    """Write detection, ego-motion and radar CSV files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("detections", "ego", "radar")}
    with open(paths["detections"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_HEADER)
        for d in dets:
            w.writerow([d[0], repr(float(d[1])), d[2]] + [repr(float(v)) for v in d[3:7]] + [d[7]])
    with open(paths["ego"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EGO_HEADER)
        for e in ego:
            w.writerow([repr(float(v)) for v in e])
    with open(paths["radar"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RADAR_HEADER)
        for r in radar:
            w.writerow([repr(float(r[0])), r[1], repr(float(r[2])), repr(float(r[3]))])
    return paths


def radar_from_rows(rows):
    return [RadarTruth(float(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in rows]


def detections_from_rows(rows):
    streams = defaultdict(list)
    for r in rows:
        streams[r[2]].append(Detection(r[0], r[1], r[2], tuple(r[3:7]), r[7]))
    return dict(sorted(streams.items()))


def ego_from_rows(rows):
    arr = np.asarray(rows, dtype=float)
    return EgoMotion(arr[:, 0], arr[:, 1:4], arr[:, 4:7])
