from dataclasses import replace

import numpy as np
import pytest

from sdretrack.camera import CameraRig
from sdretrack.exceptions import DivergenceError
from sdretrack.simlab import (FilterConfig, Profile, Scenario, error_stats, monte_carlo, run_comparison,
                              run_scale, simulate_truth, write_aggregate_csv, write_comparison)

STILL = dict(cam_linear=Profile(), cam_angular=Profile(), obj_velocity=Profile())


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(dt=0.0)
    with pytest.raises(ValueError):
        Scenario(duration=1e-4, dt=1e-3)
    with pytest.raises(ValueError):
        Scenario(vc_scale=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        FilterConfig(Q=(0.0, 1.0, 1.0))


def test_zero_motion_constant_sequences():
    truth = simulate_truth(Scenario(duration=1.0, **STILL))
    assert np.all(truth.x == truth.x[0]) and np.all(truth.y == truth.y[0])


def test_closed_form_depth():
    sc = Scenario(duration=2.0, dt=1e-4, x0=(0.0, 0.0, 0.2), cam_linear=Profile((0.0, 0.0, 1.5)),
                  cam_angular=Profile(), obj_velocity=Profile())
    truth = simulate_truth(sc)
    exact = 0.2 / (1 - 1.5 * 0.2 * truth.t)
    err = np.abs(truth.x[:, 2] - exact).max()
    # forward Euler global error budget ~ T * t * max|x3''| / 2
    assert err < 1e-4 * 2.0 * 1.5 ** 2 * exact.max() ** 3 * 3
    assert np.all(truth.x[:, :2] == 0)
    finer = simulate_truth(replace(sc, substeps=10))
    assert np.abs(finer.x[:, 2] - exact).max() < err / 5


def test_divergence_reports_time():
    sc = Scenario(duration=2.0, x0=(0.0, 0.0, 0.5), cam_linear=Profile((0.0, 0.0, 3.0)),
                  cam_angular=Profile(), obj_velocity=Profile(), substeps=1)
    with pytest.raises(DivergenceError) as err:
        simulate_truth(sc)
    assert 0 < err.value.time < 2.0


def test_fixed_seed_bitwise_reproducible():
    sc = Scenario(duration=1.0, meas_noise_std=(1e-3, 1e-3), process_noise_std=(1e-5, 1e-5, 1e-6), seed=9)
    a, b = simulate_truth(sc), simulate_truth(sc)
    assert a.measurement_hash() == b.measurement_hash() and np.array_equal(a.x, b.x)
    c = simulate_truth(replace(sc, seed=10))
    assert c.measurement_hash() != a.measurement_hash()


def test_pixel_quantization():
    rig = CameraRig()
    truth = simulate_truth(Scenario(duration=0.5, quantize_rig=rig))
    v = truth.y[:, 0] * rig.f_y + rig.y_0
    u = truth.y[:, 1] * rig.f_x + rig.x_0
    np.testing.assert_allclose(v, np.round(v), atol=1e-9)
    np.testing.assert_allclose(u, np.round(u), atol=1e-9)
    assert np.abs(truth.y - truth.x[:, :2]).max() <= 0.5 / rig.f_x + 1e-12


def test_estimators_see_scaled_camera_velocity():
    truth = simulate_truth(Scenario(duration=0.1, vc_scale=(0.8, 0.9, 1.1)))
    np.testing.assert_allclose(truth.u_model[:, :3], truth.u_true[:, :3] * [0.8, 0.9, 1.1])
    np.testing.assert_array_equal(truth.u_model[:, 3:], truth.u_true[:, 3:])


def test_error_stats_examples():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((100, 3))
    s = error_stats(truth.copy(), truth)
    assert not s.mean.any() and not s.var.any()
    s = error_stats(truth - 0.25, truth)
    np.testing.assert_allclose(s.mean, 0.25)
    np.testing.assert_allclose(s.var, 0.0, atol=1e-25)
    noise = rng.normal(0, 0.3, (10000, 3))
    s = error_stats(truth[:1].repeat(10000, 0) - noise, truth[:1].repeat(10000, 0))
    np.testing.assert_allclose(s.var, 0.09, rtol=0.1)
    with pytest.raises(ValueError, match="length"):
        error_stats(truth[:5], truth)


def test_paired_comparison_orderings_nominal():
    res = run_comparison(Scenario())
    hashes = set(res.measurement_hashes.values())
    assert len(hashes) == 1
    st = res.stats
    for i in (0, 1):
        assert st["uio"].steady_rms[i] <= st["switched"].steady_rms[i] <= st["sdre"].steady_rms[i]
    again = run_comparison(Scenario())
    for k in st:
        np.testing.assert_array_equal(st[k].mae, again.stats[k].mae)


def test_monte_carlo_degenerate_sweep_matches_single_run():
    sc = Scenario(duration=2.0, meas_noise_std=(3e-4, 3e-4), seed=5)
    mc = monte_carlo(sc, n_runs=1, vc_range=(1.0, 1.0), seed=5)
    single = run_comparison(sc)
    for k in ("switched", "sdre", "uio"):
        np.testing.assert_array_equal(mc.run_stats[0][k].mean, single.stats[k].mean)
        np.testing.assert_array_equal(mc.aggregate[k]["mean_of_vars"], single.stats[k].var)


def test_monte_carlo_scales_and_failures():
    s1 = run_scale(None, 0, 3, (0.5, 1.5))
    assert np.all((s1 >= 0.5) & (s1 <= 1.5)) and len(set(s1)) == 3
    np.testing.assert_array_equal(s1, run_scale(None, 0, 3, (0.5, 1.5)))
    with pytest.raises(ValueError):
        monte_carlo(Scenario(), n_runs=0)
    with pytest.raises(ValueError):
        monte_carlo(Scenario(), n_runs=1, vc_range=(1.5, 0.5))
    diverging = Scenario(duration=1.0, x0=(0.0, 0.0, 0.5), cam_linear=Profile((0.0, 0.0, 3.0)))
    mc = monte_carlo(diverging, n_runs=2)
    assert len(mc.failures) == 2 and mc.n_ok == 0 and "DivergenceError" in mc.failures[0]["error"]


def test_outputs(tmp_path):
    sc = Scenario(duration=0.2)
    res = run_comparison(sc)
    write_comparison(tmp_path / "run", res, sc, FilterConfig())
    assert sorted(p.name for p in (tmp_path / "run").iterdir()) == [
        "summary.json", "trace_sdre.csv", "trace_switched.csv", "trace_uio.csv", "truth.csv"]
    mc = monte_carlo(sc, n_runs=2, seed=1)
    write_aggregate_csv(tmp_path / "agg.csv", mc)
    lines = (tmp_path / "agg.csv").read_text().splitlines()
    assert lines[0] == "estimator,state,mean_err,var_err,runs" and len(lines) == 10
    assert lines[1].startswith("switched,x1,") and lines[1].endswith(",2")
