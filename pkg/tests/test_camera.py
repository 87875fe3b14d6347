import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdretrack.camera import (DEFAULT_DEPTH_COEFFS, CalibratedOutputModel, CameraRig, fit_calibrated_model,
                              geometric_output, intercept_depth_to_pixel, intercept_depth_to_row,
                              intercept_pixel_to_depth, intercept_row_to_depth, load_calibrated_model,
                              load_calibration_samples, load_rig, observation_model_calibrated,
                              observation_model_geometric, pixels_to_ratios, project_to_pixels)
from sdretrack.exceptions import CalibrationRangeError, DomainError
from sdretrack.oracle import inverse_3x3


def row_by_hand(Z):
    c1, r1, c2, r2 = 588.0, -0.161, 382.6, -0.002547
    return c1 * math.exp(r1 * Z) + c2 * math.exp(r2 * Z)


def test_rig_validation():
    with pytest.raises(ValueError, match="equal"):
        CameraRig(f_x=900, f_y=901)
    with pytest.raises(ValueError):
        CameraRig(H=0.0)
    with pytest.raises(ValueError, match="unknown"):
        CameraRig.from_dict({"focal": 1.0})


def test_identity_intrinsics():
    rig = CameraRig(f_x=1.0, f_y=1.0, x_0=0.0, y_0=0.0)
    assert project_to_pixels((0.2, 0.3, 0.1), rig) == pytest.approx((0.3, 0.2))


def test_vertical_pixel_substitution():
    rig = CameraRig(f_x=1000.0, f_y=1000.0, y_0=500.0)
    assert project_to_pixels((0.1, 0.0, 0.1), rig)[1] == pytest.approx(600.0)


def test_projection_round_trip_via_independent_inverse():
    rng = np.random.default_rng(5)
    for _ in range(100):
        f = rng.uniform(300, 2000)
        rig = CameraRig(f_x=f, f_y=f, x_0=rng.uniform(0, 1000), y_0=rng.uniform(0, 800))
        x = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.01, 1)])
        u, v = project_to_pixels(x, rig)
        back = inverse_3x3(rig.intrinsic_matrix()) @ np.array([u, v, 1.0])
        np.testing.assert_allclose(back, [x[1], x[0], 1.0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(pixels_to_ratios(u, v, rig), x[:2], rtol=1e-12, atol=1e-12)


def test_intercept_examples():
    rig = CameraRig(F=1.0, H=1.0)
    assert intercept_depth_to_pixel(2.0, rig) == pytest.approx(0.5)
    Z = np.logspace(0, 6, 50)
    y = intercept_depth_to_pixel(Z, CameraRig())
    assert np.all(np.diff(y) < 0) and y[-1] < 1e-8
    with pytest.raises(DomainError):
        intercept_depth_to_pixel(0.0, rig)


@settings(max_examples=300, deadline=None)
@given(st.floats(1.0, 100.0))
def test_intercept_round_trip(Z):
    rig = CameraRig()
    assert intercept_pixel_to_depth(intercept_depth_to_pixel(Z, rig), rig) == pytest.approx(Z, rel=1e-9)
    assert intercept_row_to_depth(intercept_depth_to_row(Z, rig), rig) == pytest.approx(Z, rel=1e-9)


def test_geometric_observation():
    rig = CameraRig()
    x3 = rig.y_0 / (rig.F * rig.H * rig.h / rig.h_f)
    assert observation_model_geometric((0.3, x3), rig)[1] == pytest.approx(0.0, abs=1e-12)
    assert observation_model_geometric((0.0, 0.05), rig)[0] == 0.0
    rng = np.random.default_rng(1)
    C, offset = geometric_output(rig)
    for _ in range(50):
        x = np.array([rng.uniform(-1, 1), rng.uniform(0.01, 1), 0.0, 0.0])
        y_tilde = intercept_depth_to_pixel(1.0 / x[1], rig)
        expected = (y_tilde * rig.h / rig.h_f - rig.y_0) / rig.f_y
        got = observation_model_geometric(x, rig)
        assert got[1] == pytest.approx(expected, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(C @ x + offset, got, rtol=1e-12, atol=1e-12)


def test_calibrated_value_at_50m():
    m = CalibratedOutputModel()
    assert m.row_from_depth(50.0) == pytest.approx(row_by_hand(50.0), rel=1e-14)
    # published approximation is 337.05 px
    assert m.row_from_depth(50.0) == pytest.approx(337.05, abs=0.05)


def test_calibrated_observation_and_offset():
    m = CalibratedOutputModel()
    col, row = observation_model_calibrated((0.0, 1 / 50.0), m)
    assert col == pytest.approx(673.6)
    assert m.observe((0.0, 1 / 50.0))[0] == 0.0
    x = np.array([0.05, 1 / 30.0, 1.0, -2.0])
    np.testing.assert_allclose(m.output_matrix(x) @ x, m.observe(x), rtol=1e-13)
    np.testing.assert_allclose(m.output_map()(x, None), m.output_matrix(x))
    with pytest.raises(CalibrationRangeError):
        observation_model_calibrated((0.0, 1 / 150.0), m)


def test_paper_model_monotone():
    m = CalibratedOutputModel()
    assert m.is_monotone()
    Z = np.linspace(1, 100, 100001)
    assert np.all(np.diff(m.row_from_depth(Z)) < 0)


@settings(max_examples=300, deadline=None)
@given(st.floats(1.0, 100.0), st.floats(-0.5, 0.5))
def test_calibrated_round_trip(Z, ratio):
    m = CalibratedOutputModel()
    col, row = observation_model_calibrated((ratio, 1.0 / Z), m)
    x2, x3 = m.state_from_pixels(col, row)
    assert 1.0 / x3 == pytest.approx(Z, rel=1e-9)
    assert x2 == pytest.approx(ratio, rel=1e-9, abs=1e-12)


def test_depth_inversion_out_of_range():
    m = CalibratedOutputModel()
    with pytest.raises(CalibrationRangeError):
        m.depth_from_row(m.row_from_depth(1.0) + 10)
    with pytest.raises(CalibrationRangeError):
        m.depth_from_row(m.row_from_depth(100.0) - 10)


def synth_samples(rng, n=60, noise=0.0, coeffs=DEFAULT_DEPTH_COEFFS, lateral=(-1214.0, 673.6)):
    depth = rng.uniform(1, 100, n)
    ratio = rng.uniform(-0.3, 0.3, n)
    c1, r1, c2, r2 = coeffs
    row = c1 * np.exp(r1 * depth) + c2 * np.exp(r2 * depth) + noise * rng.standard_normal(n)
    col = lateral[0] * ratio + lateral[1] + noise * rng.standard_normal(n)
    return np.column_stack([depth, ratio, row, col])


def test_fit_exact_lateral_and_depth():
    rng = np.random.default_rng(0)
    samples = synth_samples(rng, lateral=(-987.5, 612.25))
    m = fit_calibrated_model(samples)
    assert m.linear_params_[0] == pytest.approx(-987.5, rel=1e-8)
    assert m.linear_params_[1] == pytest.approx(612.25, rel=1e-8)
    np.testing.assert_allclose(m.exp2_params_, DEFAULT_DEPTH_COEFFS, rtol=1e-4)
    assert m.row_rms_ < 1e-6
    # constructor parameters untouched by fitting
    assert m.get_params()["c1"] == 588.0


def test_fit_with_pixel_noise():
    rng = np.random.default_rng(1)
    samples = synth_samples(rng, n=200, noise=1.0)
    m = fit_calibrated_model(samples)
    Z = np.linspace(1, 100, 500)
    truth = CalibratedOutputModel().row_from_depth(Z)
    assert np.sqrt(np.mean((m.row_from_depth(Z) - truth) ** 2)) <= 2.0
    assert m.score(samples[:, :2], samples[:, 2:]) > -2.0


def test_fit_rejects_bad_samples():
    rng = np.random.default_rng(2)
    samples = synth_samples(rng)
    with pytest.raises(ValueError, match="8 samples"):
        fit_calibrated_model(samples[:5])
    narrow = samples.copy()
    narrow[:, 0] = np.linspace(40, 60, len(narrow))
    with pytest.raises(ValueError, match="2:1"):
        fit_calibrated_model(narrow)
    flat = samples.copy()
    flat[:, 2] = 300.0
    with pytest.raises(ValueError, match="constant"):
        fit_calibrated_model(flat)


def test_config_files(tmp_path):
    (tmp_path / "rig.yaml").write_text("rig:\n  f_x: 800\n  f_y: 800\n  H: 1.2\n")
    rig = load_rig(tmp_path / "rig.yaml")
    assert rig.f_x == 800 and rig.H == 1.2 and rig.x_0 == 640.0
    (tmp_path / "model.yaml").write_text("model:\n  c1: 600\n  intercept: 640\n")
    m = load_calibrated_model(tmp_path / "model.yaml")
    assert m.exp2_params[0] == 600 and m.linear_params[1] == 640
    (tmp_path / "bad.yaml").write_text("model:\n  c3: 1\n")
    with pytest.raises(ValueError):
        load_calibrated_model(tmp_path / "bad.yaml")


def test_calibration_csv(tmp_path):
    rng = np.random.default_rng(3)
    samples = synth_samples(rng, n=20)
    path = tmp_path / "cal.csv"
    lines = ["depth_m,lateral_ratio,pixel_row,pixel_col"] + [",".join(repr(float(v)) for v in r) for r in samples]
    path.write_text("\n".join(lines) + "\n")
    np.testing.assert_array_equal(load_calibration_samples(path), samples)
    path.write_text("depth,ratio,row,col\n1,2,3,4\n")
    with pytest.raises(ValueError, match="header"):
        load_calibration_samples(path)
    path.write_text("depth_m,lateral_ratio,pixel_row,pixel_col\n1,2,x,4\n")
    with pytest.raises(ValueError, match=":2:"):
        load_calibration_samples(path)
