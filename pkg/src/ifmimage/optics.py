"""
optics.py: Resolution model of the signal image, the matching blur, the SPDC mode function
and the spatial-bandwidth estimate.

Units follow the suffixes used in ImagingGeometry: mm for focal lengths and crystal length,
nm for wavelengths, um for waists, pitches and image-plane widths, rad/m for wave vectors.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.ndimage import correlate1d
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.special import erf

from ifmimage.config import ImagingGeometry
from ifmimage.errors import FitError, InvalidParameterError

logger = logging.getLogger(__name__)

_SQRT2_PI = np.sqrt(2.0) * np.pi


@dataclass(frozen=True)
class EsfFit:
    """Parameters of I(x) = a - b * erf[(x - x_c) / sigma]."""

    a: float
    b: float
    x_c: float
    sigma: float


@dataclass(frozen=True, eq=False)
class PhaseMatchingParams:
    crystal_length_mm: float
    delta_k: float
    k_s: np.ndarray
    k_i: np.ndarray

    def __post_init__(self) -> None:
        if self.crystal_length_mm <= 0.0:
            raise InvalidParameterError("crystal length must be positive")

    def amplitude(self, pump_waist_um: float) -> Union[float, np.ndarray]:
        return mode_function(self.k_s, self.k_i, pump_waist_um, self.delta_k, self.crystal_length_mm)


def edge_sigma(geom: ImagingGeometry) -> float:
    """Edge width sigma = f_s * lambda_s * M / (sqrt(2) * pi * w_p), in um at the camera."""
    f_s_um = geom.f_s_mm * 1e3
    lambda_s_um = geom.lambda_s_nm * 1e-3
    return f_s_um * lambda_s_um * geom.magnification / (_SQRT2_PI * geom.pump_waist_um)


def fov_sigma_i(f_i_mm: float, lambda_i_nm: float, pump_waist_um: float) -> float:
    """Resolution cell of the idler at the object, f_i * lambda_i / (sqrt(2) * pi * w_p), in um."""
    if f_i_mm <= 0.0 or lambda_i_nm <= 0.0 or pump_waist_um <= 0.0:
        raise InvalidParameterError("focal length, wavelength and pump waist must be positive")
    return f_i_mm * 1e3 * lambda_i_nm * 1e-3 / (_SQRT2_PI * pump_waist_um)


def spatial_mode_count(fov_um: float, sigma_i_um: float) -> float:
    if fov_um <= 0.0 or sigma_i_um <= 0.0:
        raise InvalidParameterError("field of view and resolution cell must be positive")
    return (fov_um / sigma_i_um) ** 2


def esf_profile(x: ArrayLike, a: float, b: float, x_c: float, sigma: float) -> np.ndarray:
    return a - b * erf((np.asarray(x, dtype=float) - x_c) / sigma)


def edge_kernel(sigma_um: float, pitch_um: float) -> np.ndarray:
    """
    Pixel-integrated Gaussian of standard deviation sigma/sqrt(2). Summing it over a half line
    telescopes, so a blurred step equals 1/2 * [1 + erf((x - x_c) / sigma)] with the edge x_c on
    the pixel boundary.
    """
    radius = int(np.ceil(6.0 * sigma_um / pitch_um)) + 1
    k = np.arange(-radius, radius + 1, dtype=float)
    weights = 0.5 * (erf((k + 0.5) * pitch_um / sigma_um) - erf((k - 0.5) * pitch_um / sigma_um))
    return weights / weights.sum()


def blur(image: ArrayLike, sigma_um: float, pitch_um: float) -> np.ndarray:
    """
    Convolve with the edge kernel along both axes. Half-sample mirror padding with a symmetric
    kernel makes the operator symmetric, so total intensity is conserved.
    """
    if sigma_um < 0.0:
        raise InvalidParameterError("blur sigma must be non-negative")
    if pitch_um <= 0.0:
        raise InvalidParameterError("pixel pitch must be positive")
    data = np.array(image, dtype=float)
    if sigma_um == 0.0:
        return data
    kernel = edge_kernel(sigma_um, pitch_um)
    for axis in range(data.ndim):
        data = correlate1d(data, kernel, axis=axis, mode="reflect")
    return data


def fit_esf(samples: Union[Sequence[Tuple[float, float]], np.ndarray]) -> EsfFit:
    """
    Nonlinear least-squares fit of the edge-spread function to (x, counts) samples.

    Raises:
        FitError: flat data, non-convergence or a degenerate result.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise InvalidParameterError("ESF samples must be (x, counts) pairs")
    if data.shape[0] < 8:
        raise InvalidParameterError(f"ESF fit needs at least 8 samples, got {data.shape[0]}")

    data = data[np.argsort(data[:, 0], kind="stable")]
    x, y = data[:, 0], data[:, 1]
    span = float(y.max() - y.min())
    if span <= 1e-12 * max(1.0, float(np.abs(y).max())):
        raise FitError("ESF samples are flat; the edge amplitude b is degenerate", {"span": span})

    tail = max(1, len(x) // 10)
    left, right = float(y[:tail].mean()), float(y[-tail:].mean())
    a0, b0 = 0.5 * (left + right), 0.5 * (left - right)
    x_c0 = float(x[np.argmin(np.abs(y - a0))])
    sigma0 = max(float(x[-1] - x[0]) / 10.0, 1e-9)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, _ = curve_fit(esf_profile, x, y, p0=[a0, b0, x_c0, sigma0], maxfev=5000)
        except RuntimeError as e:
            raise FitError(
                f"ESF fit did not converge: {e}",
                {"p0": [a0, b0, x_c0, sigma0], "samples": int(len(x))},
            ) from e

    a, b, x_c, sigma = (float(v) for v in popt)
    if sigma < 0.0:
        # erf is odd: a negative width is the same curve with b flipped
        sigma, b = -sigma, -b
    if not np.isfinite(sigma) or sigma == 0.0 or abs(b) <= 1e-9 * (abs(a) + 1.0):
        raise FitError("ESF fit is degenerate", {"a": a, "b": b, "x_c": x_c, "sigma": sigma})

    logger.debug("ESF fit: a=%.4g b=%.4g x_c=%.4g sigma=%.4g", a, b, x_c, sigma)
    return EsfFit(a=a, b=b, x_c=x_c, sigma=sigma)


def mode_function(
    k_s: ArrayLike, k_i: ArrayLike, pump_waist_um: float, delta_k: ArrayLike, crystal_length_mm: float
) -> Union[float, np.ndarray]:
    """
    Unnormalized two-photon mode function exp(-|k_s + k_i|^2 w_p^2 / 4) * sinc(-delta_k * L / 2),
    with sinc(x) = sin(x) / x. Transverse vectors run along the last axis.
    """
    w = pump_waist_um * 1e-6
    L = crystal_length_mm * 1e-3
    q = np.asarray(k_s, dtype=float) + np.asarray(k_i, dtype=float)
    q2 = np.sum(q**2, axis=-1) if q.ndim > 0 else q**2
    # numpy's sinc is sin(pi x) / (pi x)
    phase_matching = np.sinc(-np.asarray(delta_k, dtype=float) * L / 2.0 / np.pi)
    return np.exp(-q2 * w**2 / 4.0) * phase_matching
