import math

import numpy as np
import pytest

from ifmimage.config import CalibrationTargets, IfmConfig, InterferometerModel
from ifmimage.core import (
    CLEAR,
    OPAQUE,
    SPI_SETTINGS,
    PhaseSettings,
    PixelTransmission,
    calibrate_model,
    direct_return_amplitude,
    gamma_from_ifm_visibility,
    idler_return_amplitude,
    ifm_detector_rate,
    ifm_visibility,
    interference_curve,
    joint_state,
    return_probability,
    signal_rate,
    signal_visibilities,
    vac_leak_amplitude,
    visibility,
)
from ifmimage.errors import ConfigError, InvalidParameterError, UndefinedVisibilityError

IDEAL = IfmConfig()
THETAS = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)


def test_phase_settings_compare_modulo_two_pi():
    assert PhaseSettings(0.0, 2.0 * np.pi) == PhaseSettings(0.0, 0.0)
    assert PhaseSettings(-np.pi, np.pi) == PhaseSettings(np.pi, 3.0 * np.pi)
    assert PhaseSettings(0.0, np.pi) != PhaseSettings(np.pi, np.pi)
    reduced = PhaseSettings(7.0, -1.0).reduced()
    assert 0.0 <= reduced.theta < 2.0 * np.pi and 0.0 <= reduced.phi < 2.0 * np.pi


def test_ifm_config_rejects_excess_energy():
    with pytest.raises(ValueError):
        IfmConfig(transmissivity=0.7, reflectivity=0.5)


def test_pixel_transmission_range():
    with pytest.raises(InvalidParameterError):
        PixelTransmission(1.2, 0.0)
    with pytest.raises(InvalidParameterError):
        PixelTransmission(np.array([0.5, -0.1]), np.zeros(2))


@pytest.mark.parametrize(
    "px, phi, expected",
    [
        (CLEAR, 0.0, 0.0),
        (OPAQUE, 0.0, -0.5),
        (CLEAR, np.pi, 1.0),
        (PixelTransmission(1.0, np.pi / 4), np.pi, 0.5 + 0.5j),
    ],
)
def test_idler_return_amplitude(px, phi, expected):
    assert complex(idler_return_amplitude(IDEAL, phi, px)) == pytest.approx(expected, abs=1e-12)


def test_opaque_return_probability_is_a_quarter():
    assert return_probability(IDEAL, 0.0, OPAQUE) == pytest.approx(0.25)


def test_return_probability_with_imperfect_overlap(calibrated_ifm):
    # about 2% for a clear object at the sensing phase
    assert return_probability(calibrated_ifm, 0.0, CLEAR) == pytest.approx(0.0226, abs=1e-3)


@pytest.mark.parametrize(
    "px, phi, expected",
    [
        (CLEAR, 0.0, 1j),
        (CLEAR, np.pi, 0.0),
        (OPAQUE, 0.0, 0.5j),
    ],
)
def test_vac_leak_amplitude(px, phi, expected):
    assert complex(vac_leak_amplitude(IDEAL, phi, px)) == pytest.approx(expected, abs=1e-12)


def test_return_and_leak_normalization():
    rng = np.random.default_rng(3)
    for _ in range(200):
        T = rng.uniform()
        ifm = IfmConfig(transmissivity=T, reflectivity=1.0 - T)
        px = PixelTransmission(rng.uniform(), rng.uniform(0, 2 * np.pi))
        phi = rng.uniform(0, 2 * np.pi)
        total = abs(idler_return_amplitude(ifm, phi, px)) ** 2 + abs(vac_leak_amplitude(ifm, phi, px)) ** 2
        assert total == pytest.approx(T * px.amplitude**4 + (1.0 - T), abs=1e-12)


def test_opaque_return_magnitude_is_phase_independent(calibrated_ifm):
    r = idler_return_amplitude(calibrated_ifm, THETAS, OPAQUE)
    np.testing.assert_allclose(np.abs(r), 0.699 * 0.5, atol=1e-12)


def test_joint_state_weights(calibrated_ifm):
    px = PixelTransmission(0.6, 0.3)
    state = joint_state(calibrated_ifm, PhaseSettings(0.4, 1.1), px, beta=1e-3)
    # with T + R = 1 every idler photon is returned, leaked or absorbed
    assert state.idler_weight == pytest.approx(1.0, abs=1e-12)
    assert 0.999 < abs(state.vacuum_amplitude) < 1.0
    assert state.pair_amplitude == 1e-3


def test_signal_rate_examples():
    r_opaque = idler_return_amplitude(IDEAL, 0.0, OPAQUE)
    assert signal_rate(1.0, 0.0, r_opaque, 1.0) == pytest.approx(0.5)
    r_clear = idler_return_amplitude(IDEAL, np.pi, CLEAR)
    assert signal_rate(1.0, 0.0, r_clear, 1.0) == pytest.approx(2.0)
    assert signal_rate(3.0, 1.234, 0.7 + 0.2j, 0.0, 0.5) == pytest.approx(3.5)


def test_signal_rate_rejects_negative_inputs():
    with pytest.raises(InvalidParameterError):
        signal_rate(-1.0, 0.0, 0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        signal_rate(1.0, 0.0, 0.0, 1.0, b=-0.1)
    with pytest.raises(InvalidParameterError):
        signal_rate(1.0, 0.0, 0.0, 1.5)


def test_zone_rates_match_closed_forms():
    rng = np.random.default_rng(11)
    P = rng.uniform(0, 100, 1000)
    theta = rng.uniform(0, 2 * np.pi, 1000)
    phi = rng.uniform(0, 2 * np.pi, 1000)
    zone_1 = signal_rate(P, theta, idler_return_amplitude(IDEAL, phi, OPAQUE), 1.0)
    zone_2 = signal_rate(P, theta, idler_return_amplitude(IDEAL, phi, CLEAR), 1.0)
    np.testing.assert_allclose(zone_1, P * (1 - 0.5 * np.cos(theta + phi)), rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(zone_2, P * (1 + 0.5 * (np.cos(theta) - np.cos(theta + phi))), rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(
        signal_rate(P, theta + 2 * np.pi, idler_return_amplitude(IDEAL, phi, CLEAR), 1.0), zone_2, rtol=1e-12, atol=1e-10
    )


def test_four_settings_on_both_zones():
    # (theta, phi): zone I rate, zone II rate for unit emission
    expected = [(1.5, 2.0), (0.5, 0.0), (1.5, 1.0), (0.5, 1.0)]
    for (phases, _), (zone_1, zone_2) in zip(SPI_SETTINGS, expected):
        r1 = idler_return_amplitude(IDEAL, phases.phi, OPAQUE)
        r2 = idler_return_amplitude(IDEAL, phases.phi, CLEAR)
        assert signal_rate(1.0, phases.theta, r1, 1.0) == pytest.approx(zone_1, abs=1e-12)
        assert signal_rate(1.0, phases.theta, r2, 1.0) == pytest.approx(zone_2, abs=1e-12)


def test_single_pixel_combination_is_twice_transparent_emission():
    rng = np.random.default_rng(5)
    P_1, P_2 = rng.uniform(0, 50, 100), rng.uniform(0, 50, 100)
    total = np.zeros(100)
    for phases, sign in SPI_SETTINGS:
        r1 = idler_return_amplitude(IDEAL, phases.phi, OPAQUE)
        r2 = idler_return_amplitude(IDEAL, phases.phi, CLEAR)
        total += sign * (signal_rate(P_1, phases.theta, r1, 1.0) + signal_rate(P_2, phases.theta, r2, 1.0))
    np.testing.assert_allclose(total, 2 * P_2, rtol=1e-12, atol=1e-10)


def test_ifm_detector_visibility():
    assert ifm_visibility(IDEAL) == pytest.approx(1.0)
    assert ifm_visibility(IfmConfig(mode_overlap=0.699)) == pytest.approx(0.939, abs=1e-3)
    flat = ifm_detector_rate(IfmConfig(mode_overlap=0.8), THETAS, OPAQUE)
    np.testing.assert_allclose(flat, 0.25 * 0.64, rtol=1e-12)


def test_gamma_from_ifm_visibility_inverts():
    assert gamma_from_ifm_visibility(0.939) == pytest.approx(0.699, abs=2e-3)
    assert gamma_from_ifm_visibility(1.0) == pytest.approx(1.0)
    assert gamma_from_ifm_visibility(0.0) == 0.0
    for g in (0.1, 0.5, 0.9):
        assert gamma_from_ifm_visibility(2 * g / (1 + g * g)) == pytest.approx(g)


def test_interference_curve_visibilities(ideal_model):
    assert visibility(interference_curve(ideal_model, 1.0, np.pi, CLEAR, THETAS)) == pytest.approx(1.0)
    assert visibility(interference_curve(ideal_model, 1.0, 0.0, CLEAR, THETAS)) == pytest.approx(0.0, abs=1e-12)
    # opaque object, ideal case: 50% visibility
    assert visibility(interference_curve(ideal_model, 1.0, 0.0, OPAQUE, THETAS)) == pytest.approx(0.5)
    half = InterferometerModel(signal_vis_factor=0.5)
    assert visibility(interference_curve(half, 1.0, 0.0, OPAQUE, THETAS)) == pytest.approx(0.25)


def test_interference_curve_rejects_unknown_channel(ideal_model):
    with pytest.raises(ConfigError):
        interference_curve(ideal_model, 1.0, 0.0, CLEAR, THETAS, channel="pump")
    with pytest.raises(InvalidParameterError):
        interference_curve(ideal_model, 1.0, 0.0, CLEAR, [])


def test_visibility_examples():
    assert visibility([1.5, 0.5]) == pytest.approx(0.5)
    assert visibility([3.0, 3.0, 3.0]) == 0.0
    assert visibility([2.0, 0.0]) == 1.0
    with pytest.raises(UndefinedVisibilityError):
        visibility([0.0, 0.0])


def test_direct_return_amplitude():
    px = PixelTransmission(0.5, np.pi / 8)
    assert complex(direct_return_amplitude(px)) == pytest.approx(0.25 * np.exp(1j * np.pi / 4))


def test_calibration_reproduces_measured_visibilities():
    result = calibrate_model(CalibrationTargets())
    assert result.feasible
    for name in ("phi_pi", "phi_0", "object"):
        assert abs(result.residuals[name]) <= 0.05
    vis = signal_visibilities(result.model)
    assert vis["phi_pi"] == pytest.approx(0.693, abs=0.05)
    assert vis["phi_0"] == pytest.approx(0.121, abs=0.05)
    assert vis["object"] == pytest.approx(0.223, abs=0.05)
    assert 0.0 <= result.model.idler_vis_factor <= 1.0
    assert 0.0 <= result.model.coinc_vis_factor <= 1.0
    assert "idler_phi_pi" in result.residuals and "coinc_phi_0" in result.residuals


def test_calibration_ideal_targets_fit_exactly():
    result = calibrate_model(CalibrationTargets(signal=(1.0, 0.0, 0.5), idler=None, coincidence=None))
    assert result.feasible
    assert result.model.signal_vis_factor == pytest.approx(1.0, abs=1e-4)
    assert result.model.ifm.mode_overlap == pytest.approx(1.0, abs=1e-4)


def test_calibration_flags_inconsistent_targets():
    result = calibrate_model(CalibrationTargets(signal=(0.5, 0.5, 0.0), idler=None, coincidence=None))
    assert not result.feasible


def test_calibration_needs_both_arms():
    with pytest.raises(InvalidParameterError):
        calibrate_model(CalibrationTargets(), IfmConfig(transmissivity=1.0, reflectivity=0.0))


def test_calibration_ignores_background_rate():
    plain = calibrate_model(CalibrationTargets())
    result = calibrate_model(CalibrationTargets(), background_rate=400.0)
    assert result.model.background_rate == 400.0
    assert result.model.signal_vis_factor == pytest.approx(plain.model.signal_vis_factor)
    assert result.model.ifm.mode_overlap == pytest.approx(plain.model.ifm.mode_overlap)
    vis = signal_visibilities(result.model)
    assert vis["phi_pi"] == pytest.approx(0.693, abs=0.05)
    assert vis["phi_0"] == pytest.approx(0.121, abs=0.05)
    assert vis["object"] == pytest.approx(0.223, abs=0.05)
    # the background still dilutes the count-level curve
    diluted = visibility(interference_curve(result.model, 1.0, np.pi, CLEAR, THETAS))
    assert diluted < vis["phi_pi"]


def test_interference_curve_is_periodic(ideal_model):
    a = interference_curve(ideal_model, 2.0, 0.3, CLEAR, [0.1, 1.0])
    b = interference_curve(ideal_model, 2.0, 0.3, CLEAR, [0.1 + 2 * math.pi, 1.0 + 2 * math.pi])
    np.testing.assert_allclose(a, b, rtol=1e-12)
