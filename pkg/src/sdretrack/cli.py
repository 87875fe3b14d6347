"""Command-line entry point: ``sdretrack <command> ...``."""

import argparse
import logging
import os
import sys
from dataclasses import asdict

import numpy as np
import yaml

from . import analysis, pipeline, simlab
from .camera import CameraRig, CalibratedOutputModel, load_calibrated_model, load_calibration_samples, load_rig
from .config import load_config, with_overrides
from .estimators import FilterState, run_filter
from .exceptions import DivergenceError, FilterRunError
from .sdc import sfm3d_system

log = logging.getLogger("sdretrack")

GRAMIAN_NOTE = ("Gramian is the forward sum of chi^T C^T C chi with chi the product of transition "
                "Jacobians over the window")


def _write_yaml(path, data):
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def cmd_simulate(args):
    cfg = with_overrides(load_config(args.config), seed=args.seed, vc_scale=args.vc_scale)
    result = simlab.run_comparison(cfg.scenario, cfg.filter, tuple(args.estimators))
    simlab.write_comparison(args.out_dir, result, cfg.scenario, cfg.filter)
    for name, st in result.stats.items():
        log.info("%s: steady rms %s", name, np.array2string(st.steady_rms, precision=3))
    return 0


def cmd_montecarlo(args):
    cfg = load_config(args.config)
    mc = cfg.montecarlo
    runs = mc.runs if args.runs is None else args.runs
    vc_range = mc.vc_range if args.vc_range is None else args.vc_range
    workers = mc.workers if args.workers is None else args.workers
    seed = cfg.scenario.seed if args.seed is None else args.seed
    result = simlab.monte_carlo(cfg.scenario, runs, vc_range, cfg.filter, tuple(args.estimators),
                                seed=seed, workers=workers, curves=True)
    os.makedirs(args.out_dir, exist_ok=True)
    simlab.write_aggregate_csv(os.path.join(args.out_dir, "aggregate.csv"), result)
    simlab.write_curves_csv(os.path.join(args.out_dir, "curves.csv"), result, stride=args.curve_stride)
    summary = result.summary()
    summary.update({"seed": seed, "vc_range": list(vc_range), "scales": result.scales,
                    "scenario": cfg.scenario.to_dict(), "filter": asdict(cfg.filter),
                    "mean_err_definition": "run average of per-run mean absolute error"})
    simlab.write_json(os.path.join(args.out_dir, "summary.json"), summary)
    log.info("%d/%d runs succeeded", result.n_ok, runs)
    return 0 if result.n_ok else 1


def uncertainty_bounds(scenario, truth, system):
    """Three-sigma noise norms plus the largest one-step model residual along the truth."""
    v = 3.0 * float(np.linalg.norm(scenario.meas_noise_std))
    x, u = truth.x, truth.u_model
    resid = max(float(np.linalg.norm(x[k + 1] - system.step(x[k], u[k]))) for k in range(x.shape[0] - 1))
    w = 3.0 * float(np.linalg.norm(scenario.process_noise_std)) + resid
    return v, w


def analyze_scenario(cfg):
    sc, fc, ac = cfg.scenario, cfg.filter, cfg.analysis
    truth = simlab.simulate_truth(sc)
    system = sfm3d_system(sc.dt, sc.unknown_inputs)
    Q, R, P0 = fc.matrices(3, 2)
    v_auto, w_auto = uncertainty_bounds(sc, truth, system)
    v_bound = v_auto if ac.v_bound is None else float(ac.v_bound)
    w_bound = w_auto if ac.w_bound is None else float(ac.w_bound)
    bounds = analysis.estimate_bounds(system, ac.box, ac.samples, Q, R, seed=ac.seed)
    report = {"v_bound": v_bound, "w_bound": w_bound, "model_bounds": asdict(bounds),
              "certificates": {}, "errors": {}}
    for name, period in (("switched", fc.switch_period), ("sdre", 0)):
        init = FilterState.initial(sc.x_hat0, P0, Q, R, period)
        try:
            trace = run_filter(system, init, truth.u_model, truth.y, dt=sc.dt, truth=truth.x, name=name)
        except FilterRunError as exc:
            report["errors"][name] = str(exc)
            continue
        cert = analysis.run_certificate(system, trace, truth.u_model, Q, R, bounds, ac.lambda0,
                                        v_bound, w_bound)
        err = trace.errors
        steady = err[err.shape[0] // 2:]
        d = cert.to_dict()
        d["steady_error_norm_max"] = float(np.linalg.norm(steady, axis=1).max())
        report["certificates"][name] = d
    windows = []
    a = ac.window
    starts = range(0, truth.x.shape[0] - a - 1, max(1, (truth.x.shape[0] - a - 1) // 10))
    for t in starts:
        try:
            g = analysis.observability_gramian(system, truth.x, a, truth.u_model, t=t)
            windows.append({"t": int(t), "min_eig": g.min_eig, "max_eig": g.max_eig})
        except np.linalg.LinAlgError as exc:
            windows.append({"t": int(t), "error": str(exc)})
    report["gramian"] = {"window": a, "windows": windows, "note": GRAMIAN_NOTE}
    report["notes"] = [analysis.QUADRATIC_NOTE,
                       "lambda0 is a user-supplied decay rate; no formula links it to the switching period"]
    report["scenario"] = sc.to_dict()
    report["filter"] = asdict(fc)
    return report


def cmd_analyze(args):
    cfg = with_overrides(load_config(args.config), seed=args.seed)
    report = analyze_scenario(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    simlab.write_json(os.path.join(args.out_dir, "certificate.json"), report)
    return 0


def cmd_track(args):
    cfg = load_config(args.config)
    rig = CameraRig() if args.rig is None else load_rig(args.rig)
    model = CalibratedOutputModel() if args.model is None else load_calibrated_model(args.model)
    streams = pipeline.ingest_detections(args.detections, pipeline.image_size(rig))
    ego = pipeline.load_ego_motion(args.ego)
    results = pipeline.track_objects(streams, ego, rig, model, cfg.tracker)
    os.makedirs(args.out_dir, exist_ok=True)
    summary = {"tracks": {}}
    for oid, res in results.items():
        res.to_csv(os.path.join(args.out_dir, f"track_{oid}.csv"))
        summary["tracks"][oid] = {"status": res.status, "message": res.message,
                                  "steps": int(res.t.shape[0]), "dropped": res.dropped}
    if args.radar:
        truth = pipeline.load_radar(args.radar)
        tol = args.tolerance if args.tolerance is not None else 0.5 * cfg.tracker.dt
        summary["evaluation"] = pipeline.evaluate_against_radar(results, truth, tol).to_dict()
        summary["tolerance"] = tol
    summary["tracker"] = asdict(cfg.tracker)
    simlab.write_json(os.path.join(args.out_dir, "evaluation.json"), summary)
    failed = [o for o, r in results.items() if r.status == "failed"]
    return 1 if failed and len(failed) == len(results) else 0


def cmd_synth_scene(args):
    model = CalibratedOutputModel() if args.model is None else load_calibrated_model(args.model)
    objects = [pipeline.SyntheticObject(1, 95.0, 2.5, 0.0, 15.0),
               pipeline.SyntheticObject(2, 60.0, -3.0, 0.0, 18.0)][:args.objects]
    dets, ego, radar = pipeline.simulate_scene(objects, args.duration, model=model, seed=args.seed,
                                               jitter_px=args.jitter)
    pipeline.write_scene(args.out_dir, dets, ego, radar)
    return 0


def cmd_calibrate(args):
    samples = load_calibration_samples(args.samples)
    model = CalibratedOutputModel().fit(samples[:, :2], samples[:, 2:])
    out = {"model": {k: float(v) for k, v in model.to_dict().items()},
           "fit": {"row_rms_px": float(model.row_rms_), "col_rms_px": float(model.col_rms_)}}
    _write_yaml(args.out, out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sdretrack", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="single paired comparison of the estimators")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--vc-scale", type=float, nargs=3, metavar=("S1", "S2", "S3"))
    s.add_argument("--estimators", nargs="+", default=list(simlab.ESTIMATORS), choices=simlab.ESTIMATORS)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("montecarlo", help="camera-velocity uncertainty sweep")
    s.add_argument("--config")
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--vc-range", type=float, nargs=2, metavar=("LOW", "HIGH"))
    s.add_argument("--workers", type=int)
    s.add_argument("--curve-stride", type=int, default=10)
    s.add_argument("--estimators", nargs="+", default=list(simlab.ESTIMATORS), choices=simlab.ESTIMATORS)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("analyze", help="stability certificate and observability report")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("track", help="offline multi-object distance tracking")
    s.add_argument("--detections", required=True)
    s.add_argument("--ego", required=True)
    s.add_argument("--radar")
    s.add_argument("--rig")
    s.add_argument("--model")
    s.add_argument("--config")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("synth-scene", help="write a synthetic detection/ego/radar scene")
    s.add_argument("--duration", type=float, default=3.0)
    s.add_argument("--objects", type=int, default=2, choices=(1, 2))
    s.add_argument("--jitter", type=float, default=0.0, help="pixel noise std before rounding")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth_scene)

    s = sub.add_parser("calibrate", help="fit the calibrated output model to pixel samples")
    s.add_argument("--samples", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, FilterRunError, DivergenceError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
