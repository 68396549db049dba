"""
core.py: Complex-amplitude model of the double-pass SPDC interferometer with an embedded
interaction-free measurement (IFM) module.

The idler photon from the first pass enters a Michelson interferometer. Arm 2 returns it
with amplitude -gamma*R*exp(i*phi); arm 3 holds the object, traversed twice, and returns
T*t^2*exp(2i*delta). Whatever comes back overlaps with the second-pass idler mode and sets
the visibility of the signal fringe; everything else leaves through the Vac port or is
absorbed. All functions broadcast over numpy arrays, so a whole pixel grid or a theta
scan is evaluated in one call.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import least_squares

from ifmimage.config import CalibrationTargets, IfmConfig, InterferometerModel
from ifmimage.errors import InvalidParameterError, UndefinedVisibilityError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

Amplitude = Union[complex, np.ndarray]


@dataclass(frozen=True, eq=False)
class PhaseSettings:
    """Signal-arm phase theta and IFM relative phase phi, in radians."""

    theta: float
    phi: float

    def reduced(self) -> "PhaseSettings":
        return PhaseSettings(self.theta % TWO_PI, self.phi % TWO_PI)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhaseSettings):
            return NotImplemented
        return bool(_same_angle(self.theta, other.theta) and _same_angle(self.phi, other.phi))

    __hash__ = None  # type: ignore[assignment]


def _same_angle(a: float, b: float, atol: float = 1e-12) -> bool:
    d = (a - b) % TWO_PI
    return min(d, TWO_PI - d) <= atol


# single-pixel combination: C(0,pi) - C(pi,pi) - C(pi,0) + C(0,0)
SPI_SETTINGS: Tuple[Tuple[PhaseSettings, int], ...] = (
    (PhaseSettings(0.0, np.pi), +1),
    (PhaseSettings(np.pi, np.pi), -1),
    (PhaseSettings(np.pi, 0.0), -1),
    (PhaseSettings(0.0, 0.0), +1),
)

# array-detector differencing: constructive IFM frame minus the sensing frame
ICCD_SETTINGS: Tuple[PhaseSettings, PhaseSettings] = (
    PhaseSettings(0.0, np.pi),
    PhaseSettings(np.pi, 0.0),
)

# no IFM module: C_max - C_min of the bare induced-coherence fringe
IC_SETTINGS: Tuple[Tuple[PhaseSettings, int], ...] = (
    (PhaseSettings(0.0, 0.0), +1),
    (PhaseSettings(np.pi, 0.0), -1),
)


@dataclass(frozen=True, eq=False)
class PixelTransmission:
    """
    Single-pass field transmission t*exp(i*delta) of an object pixel.
    Both fields may be arrays of the same shape to describe a whole object.
    """

    amplitude: ArrayLike = 1.0
    phase: ArrayLike = 0.0

    def __post_init__(self) -> None:
        t = np.asarray(self.amplitude, dtype=float)
        if np.any(t < 0.0) or np.any(t > 1.0) or np.any(~np.isfinite(t)):
            raise InvalidParameterError("pixel amplitude transmission must lie in [0, 1]")

    @property
    def double_pass(self) -> Amplitude:
        """Field factor t^2 * exp(2i*delta) picked up on the way to the mirror and back."""
        t = np.asarray(self.amplitude, dtype=float)
        return t**2 * np.exp(2j * np.asarray(self.phase, dtype=float))


OPAQUE = PixelTransmission(0.0, 0.0)
CLEAR = PixelTransmission(1.0, 0.0)


@dataclass(frozen=True)
class JointState:
    vacuum_amplitude: complex
    pair_amplitude: complex
    idler_return: complex
    vac_leak: complex
    # weight lost to the object and to imperfect arm-2 mode overlap
    absorbed_weight: float

    @property
    def idler_weight(self) -> float:
        return float(abs(self.idler_return) ** 2 + abs(self.vac_leak) ** 2 + self.absorbed_weight)


@dataclass(frozen=True)
class CalibrationResult:
    model: InterferometerModel
    residuals: Dict[str, float]
    feasible: bool


def idler_return_amplitude(ifm: IfmConfig, phi: ArrayLike, px: PixelTransmission) -> Amplitude:
    """
    Amplitude of the forward idler coupled back into the crystal:
    r = T*t^2*exp(2i*delta) - gamma*R*exp(i*phi).
    """
    return ifm.transmissivity * px.double_pass - ifm.mode_overlap * ifm.reflectivity * np.exp(1j * np.asarray(phi))


def vac_leak_amplitude(ifm: IfmConfig, phi: ArrayLike, px: PixelTransmission) -> Amplitude:
    """
    Amplitude of the idler leaving through the Vac port:
    i*sqrt(T*R)*(t^2*exp(2i*delta) + gamma*exp(i*phi)).
    """
    return (
        1j
        * np.sqrt(ifm.transmissivity * ifm.reflectivity)
        * (px.double_pass + ifm.mode_overlap * np.exp(1j * np.asarray(phi)))
    )


def direct_return_amplitude(px: PixelTransmission) -> Amplitude:
    """Return amplitude without the IFM module: the object sits directly in the idler arm."""
    return px.double_pass


def return_probability(ifm: IfmConfig, phi: ArrayLike, px: PixelTransmission) -> Union[float, np.ndarray]:
    return np.abs(idler_return_amplitude(ifm, phi, px)) ** 2


def absorbed_weight(ifm: IfmConfig, px: PixelTransmission) -> Union[float, np.ndarray]:
    t4 = np.asarray(px.amplitude, dtype=float) ** 4
    T, R, g = ifm.transmissivity, ifm.reflectivity, ifm.mode_overlap
    return (T + R) * (T * (1.0 - t4) + R * (1.0 - g**2))


def joint_state(ifm: IfmConfig, phases: PhaseSettings, px: PixelTransmission, beta: complex = 1e-3) -> JointState:
    """
    Low-gain state after the second pass for a single pixel.
    The vacuum amplitude absorbs whatever norm the pair terms do not carry.
    """
    r = complex(idler_return_amplitude(ifm, phases.phi, px))
    leak = complex(vac_leak_amplitude(ifm, phases.phi, px))
    lost = float(absorbed_weight(ifm, px))
    pair_norm = abs(1.0 + np.exp(1j * phases.theta) * r) ** 2 + abs(leak) ** 2 + lost
    alpha = np.sqrt(max(0.0, 1.0 - abs(beta) ** 2 * pair_norm))
    return JointState(
        vacuum_amplitude=complex(alpha),
        pair_amplitude=complex(beta),
        idler_return=r,
        vac_leak=leak,
        absorbed_weight=lost,
    )


def signal_rate(P: ArrayLike, theta: ArrayLike, r: ArrayLike, v: float, b: float = 0.0) -> Union[float, np.ndarray]:
    """
    Expected count rate C = P*[1 + v*Re(exp(i*theta)*r)] + b.

    Args:
        P: pair emission rate in counts/s (scalar or per-pixel map).
        theta: signal-arm phase.
        r: idler return amplitude.
        v: visibility factor of the detection channel.
        b: additive background in counts/s.
    """
    P = np.asarray(P, dtype=float)
    if np.any(P < 0.0):
        raise InvalidParameterError("emission rate must be non-negative")
    if b < 0.0:
        raise InvalidParameterError("background rate must be non-negative")
    if not 0.0 <= v <= 1.0:
        raise InvalidParameterError(f"visibility factor {v} outside [0, 1]")
    fringe = np.real(np.exp(1j * np.asarray(theta, dtype=float)) * np.asarray(r))
    return P * (1.0 + v * fringe) + b


def ifm_detector_rate(ifm: IfmConfig, phi: ArrayLike, px: PixelTransmission) -> Union[float, np.ndarray]:
    """Normalized intensity at the Vac-port detector of the IFM module."""
    return np.abs(vac_leak_amplitude(ifm, phi, px)) ** 2


def interference_curve(
    model: InterferometerModel,
    P: float,
    phi: float,
    px: PixelTransmission,
    thetas: Sequence[float],
    channel: str = "signal",
) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size == 0:
        raise InvalidParameterError("interference curve needs at least one theta sample")
    v = model.vis_factor(channel)
    r = idler_return_amplitude(model.ifm, phi, px)
    return np.asarray(signal_rate(P, thetas, r, v, model.background_rate), dtype=float)


def visibility(curve: ArrayLike) -> float:
    """Fringe contrast (max - min) / (max + min)."""
    c = np.asarray(curve, dtype=float)
    if c.size == 0:
        raise InvalidParameterError("visibility of an empty curve")
    if np.any(c < -1e-12 * max(1.0, float(np.abs(c).max()))):
        raise InvalidParameterError("visibility needs a non-negative curve")
    # rounding can leave a fringe minimum a hair below zero
    c = np.clip(c, 0.0, None)
    hi, lo = float(c.max()), float(c.min())
    if hi + lo <= 0.0:
        raise UndefinedVisibilityError("visibility is undefined for an all-zero curve")
    return (hi - lo) / (hi + lo)


def ifm_visibility(ifm: IfmConfig, px: PixelTransmission = CLEAR, samples: int = 720) -> float:
    phis = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    return visibility(ifm_detector_rate(ifm, phis, px))


def gamma_from_ifm_visibility(v: float) -> float:
    """Invert V = 2*gamma / (1 + gamma^2) on gamma in [0, 1]."""
    if not 0.0 <= v <= 1.0:
        raise InvalidParameterError(f"IFM visibility {v} outside [0, 1]")
    if v == 0.0:
        return 0.0
    return (1.0 - np.sqrt(1.0 - v * v)) / v


def signal_visibilities(model: InterferometerModel, samples: int = 720) -> Dict[str, float]:
    """
    The three signal visibilities the calibration targets: constructive IFM (phi=pi), destructive
    IFM without object (phi=0) and destructive IFM with an opaque object in arm 3. They are the
    visibilities of the pair signal alone; the model's background rate is left out.
    """
    model = model.model_copy(update={"background_rate": 0.0})
    thetas = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    return {
        "phi_pi": visibility(interference_curve(model, 1.0, np.pi, CLEAR, thetas)),
        "phi_0": visibility(interference_curve(model, 1.0, 0.0, CLEAR, thetas)),
        "object": visibility(interference_curve(model, 1.0, 0.0, OPAQUE, thetas)),
    }


def _fit_channel_factor(predicted: np.ndarray, targets: Sequence[float]) -> float:
    # one-parameter linear least squares, clipped to the physical range
    denom = float(np.dot(predicted, predicted))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(predicted, np.asarray(targets, dtype=float)) / denom, 0.0, 1.0))


def calibrate_model(
    targets: CalibrationTargets,
    ifm: Optional[IfmConfig] = None,
    background_rate: float = 0.0,
) -> CalibrationResult:
    """
    Fit the signal visibility factor v_s and the mode overlap gamma to measured signal
    visibilities. With A = v_s*T and B = v_s*gamma*R the model predicts A+B at phi=pi,
    |A-B| at phi=0 and B with the object present. The |A-B| kink is handled by fitting both
    sign branches and keeping the better one. Idler and coincidence factors, when targets are
    given, are fitted afterwards with T, R and gamma held fixed.

    The targets are taken as background-subtracted visibilities, so the fit assumes no background.
    background_rate is only carried into the returned model for count predictions.
    """
    ifm = ifm or IfmConfig()
    T, R = ifm.transmissivity, ifm.reflectivity
    if T <= 0.0 or R <= 0.0:
        raise InvalidParameterError("calibration needs a beam splitter with T > 0 and R > 0")

    v_sum, v_diff, v_obj = targets.signal
    goal = np.array([v_sum, v_diff, v_obj], dtype=float)

    def predicted(x: np.ndarray) -> np.ndarray:
        a, b = x[0] * T, x[0] * x[1] * R
        return np.array([a + b, abs(a - b), b])

    best_x, best_cost = None, np.inf
    for sign in (+1.0, -1.0):
        def residuals(x: np.ndarray, sign: float = sign) -> np.ndarray:
            a, b = x[0] * T, x[0] * x[1] * R
            return np.array([a + b, sign * (a - b), b]) - goal

        fit = least_squares(
            residuals, x0=[0.9, 0.9], bounds=([0.0, 0.0], [1.0, 1.0]), ftol=1e-14, xtol=1e-14, gtol=1e-14
        )
        cost = float(np.sum((predicted(fit.x) - goal) ** 2))
        logger.debug("calibration branch %+d: x=%s cost=%.3g", int(sign), fit.x, cost)
        if cost < best_cost:
            best_x, best_cost = fit.x, cost

    assert best_x is not None
    v_s, gamma = float(best_x[0]), float(best_x[1])
    res = predicted(best_x) - goal
    residuals_by_name = {"phi_pi": float(res[0]), "phi_0": float(res[1]), "object": float(res[2])}

    fitted_ifm = IfmConfig(transmissivity=T, reflectivity=R, mode_overlap=gamma)
    channel_pred = np.array([T + gamma * R, abs(T - gamma * R)])
    v_i = _fit_channel_factor(channel_pred, targets.idler) if targets.idler else 1.0
    v_c = _fit_channel_factor(channel_pred, targets.coincidence) if targets.coincidence else 1.0
    if targets.idler:
        for name, p, t in zip(("idler_phi_pi", "idler_phi_0"), v_i * channel_pred, targets.idler):
            residuals_by_name[name] = float(p - t)
    if targets.coincidence:
        for name, p, t in zip(("coinc_phi_pi", "coinc_phi_0"), v_c * channel_pred, targets.coincidence):
            residuals_by_name[name] = float(p - t)

    consistent = v_diff < v_sum and v_obj <= v_sum
    signal_res = max(abs(r) for r in res)
    feasible = bool(consistent and signal_res <= targets.tolerance)
    if not feasible:
        logger.warning(
            "Calibration targets %s are not reproducible by the model (max residual %.3f)",
            targets.signal, signal_res,
        )

    model = InterferometerModel(
        ifm=fitted_ifm,
        signal_vis_factor=v_s,
        idler_vis_factor=v_i,
        coinc_vis_factor=v_c,
        background_rate=background_rate,
    )
    return CalibrationResult(model=model, residuals=residuals_by_name, feasible=feasible)
