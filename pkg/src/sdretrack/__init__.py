"""Switched SDRE filtering for monocular distance estimation."""

from .analysis import (ModelBounds, StabilityCertificate, check_condition_19, dwell_time, estimate_bounds,
                       k_constants, lambda_from_bounds, observability_gramian, run_certificate, ultimate_bound)
from .camera import CalibratedOutputModel, CameraRig, fit_calibrated_model
from .estimators import (EstimateTrace, FilterState, SDREFilter, SwitchedSDREFilter, filter_step, run_filter,
                         sdre_gain)
from .oracle import kalman_oracle_step, run_kalman_oracle
from .pipeline import (Detection, RadarTruth, TrackerConfig, TrackResult, contact_point, evaluate_against_radar,
                       ingest_detections, pixels_to_observation, track_objects)
from .sdc import SdcSystem, reduced_vehicle_system, sfm3d_system
from .simlab import ErrorStats, FilterConfig, Scenario, error_stats, monte_carlo, run_comparison, simulate_truth
from .uio import UnknownInputObserver, run_uio

__version__ = "0.1.0"
