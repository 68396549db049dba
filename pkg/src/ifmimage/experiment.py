"""
experiment.py: End-to-end runs of the simulator. Every run_* function takes a resolved
RunConfig and returns a result record; the record knows how to summarise itself and how to
write its artifacts. run_experiment ties the two together for the command line.
"""

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import pearsonr

from ifmimage.config import RunConfig
from ifmimage.core import (
    CLEAR,
    ICCD_SETTINGS,
    OPAQUE,
    TWO_PI,
    CalibrationResult,
    PixelTransmission,
    calibrate_model,
    direct_return_amplitude,
    idler_return_amplitude,
    ifm_detector_rate,
    ifm_visibility,
    interference_curve,
    signal_rate,
    signal_visibilities,
    visibility,
)
from ifmimage.errors import ConfigError, InfeasibleThresholdError
from ifmimage.optics import EsfFit, blur, edge_sigma, fit_esf, fov_sigma_i, spatial_mode_count
from ifmimage.scene import (
    EmissionMap,
    ImageScaling,
    ObjectMap,
    gaussian_emission,
    load_object,
    make_glyph_plate,
    make_knife_edge,
    make_text_plate,
    save_image,
    uniform_emission,
)
from ifmimage.sensing import (
    CountHistogram,
    GaussianPair,
    choose_threshold,
    confidence,
    empirical_error,
    fit_two_gaussians,
    histogram,
    save_histogram,
    simulate_trials,
)
from ifmimage.spi import (
    HadamardSpectrum,
    MaskSet,
    acquire_spectrum,
    hadamard_masks,
    reconstruct,
    save_masks,
    save_spectrum,
    spectrum_grid,
    to_mask_grid,
)

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"


def _scaling(scale: ImageScaling) -> Dict[str, float]:
    return {"offset": scale.offset, "scale": scale.scale}


def build_object(config: RunConfig) -> ObjectMap:
    desc = config.object
    pitch = config.geometry.iccd_pitch_um
    if desc.pattern == "glyph":
        obj = make_glyph_plate(desc.glyph, desc.size, pixel_pitch_um=pitch)
    elif desc.pattern == "text":
        obj, _ = make_text_plate(desc.text, desc.size, pixel_pitch_um=pitch)
    elif desc.pattern == "knife-edge":
        edge = desc.size // 2 if desc.edge_col is None else desc.edge_col
        obj = make_knife_edge(desc.size, desc.size, edge, pixel_pitch_um=pitch)
    elif desc.pattern == "file":
        assert desc.path is not None
        obj = load_object(desc.path, desc.threshold, desc.phase_path, pixel_pitch_um=pitch)
    else:
        ones = np.ones((desc.size, desc.size))
        obj = ObjectMap(ones, np.zeros_like(ones), pitch)
    return obj.inverted() if desc.invert else obj


def build_emission(config: RunConfig, obj: ObjectMap) -> EmissionMap:
    desc = config.emission
    if desc.profile == "gaussian":
        waist = desc.waist_px if desc.waist_px is not None else obj.width / 2.0
        return gaussian_emission(obj.width, obj.height, desc.rate, waist)
    return uniform_emission(obj.width, obj.height, desc.rate)


def _poisson(frame: np.ndarray, seed: np.random.SeedSequence) -> np.ndarray:
    return np.random.default_rng(seed).poisson(np.maximum(frame, 0.0)).astype(float)


@dataclass
class IccdResult:
    constructive: np.ndarray
    sensing: np.ndarray
    difference: np.ndarray
    sigma_um: Optional[float]
    scalings: Dict[str, ImageScaling] = field(default_factory=dict)

    def save(self, out_dir: str) -> List[str]:
        paths = []
        for name, frame in (
            ("frame_constructive", self.constructive),
            ("frame_sensing", self.sensing),
            ("difference", self.difference),
        ):
            path = os.path.join(out_dir, f"{name}.pgm")
            self.scalings[name] = save_image(path, frame)
            paths.append(path)
        return paths

    def summary(self) -> Dict[str, Any]:
        return {
            "blur_sigma_um": self.sigma_um,
            "difference_total": float(self.difference.sum()),
            "difference_max": float(self.difference.max()),
            "image_scaling": {name: _scaling(s) for name, s in self.scalings.items()},
        }


def run_iccd(config: RunConfig) -> IccdResult:
    """
    Array-detector imaging: one frame with the IFM constructive (theta=0, phi=pi), one at the
    sensing setting (theta=pi, phi=0). Their difference is the transparent-zone emission.
    """
    model = config.model
    obj = build_object(config)
    emission = build_emission(config, obj)
    px = obj.transmission
    sigma = edge_sigma(config.geometry) if config.blur else None
    streams = np.random.SeedSequence(config.seed).spawn(len(ICCD_SETTINGS))

    frames = []
    for phases, stream in zip(ICCD_SETTINGS, streams):
        r = idler_return_amplitude(model.ifm, phases.phi, px)
        frame = np.asarray(
            signal_rate(emission.rates, phases.theta, r, model.signal_vis_factor, model.background_rate), dtype=float
        )
        frame = frame * config.integration
        if sigma is not None:
            frame = blur(frame, sigma, config.geometry.iccd_pitch_um)
        if not config.noiseless:
            frame = _poisson(frame, stream)
        frames.append(frame)

    logger.info("ICCD frames %dx%d recorded", obj.width, obj.height)
    return IccdResult(constructive=frames[0], sensing=frames[1], difference=frames[0] - frames[1], sigma_um=sigma)


def transparent_zone_map(obj: ObjectMap, emission: EmissionMap, side: int) -> np.ndarray:
    """Emission reaching the object through its transmission, t^2*cos(2*delta)*P, carried onto the mask grid."""
    weight = emission.rates * obj.amplitude**2 * np.cos(2.0 * obj.phase)
    return to_mask_grid(weight, side)


@dataclass
class SpiResult:
    maskset: MaskSet
    spectrum: HadamardSpectrum
    image: np.ndarray
    truth: np.ndarray
    pearson: Optional[float]
    scalings: Dict[str, ImageScaling] = field(default_factory=dict)

    def save(self, out_dir: str) -> List[str]:
        spectrum_path = os.path.join(out_dir, "spectrum.csv")
        save_spectrum(spectrum_path, self.spectrum)
        recon_path = os.path.join(out_dir, "recon.pgm")
        self.scalings["recon"] = save_image(recon_path, self.image)
        grid_path = os.path.join(out_dir, "spectrum.pgm")
        self.scalings["spectrum"] = save_image(grid_path, spectrum_grid(self.spectrum, self.maskset.side))
        return [spectrum_path, recon_path, grid_path]

    def summary(self) -> Dict[str, Any]:
        return {
            "k": self.maskset.k,
            "ordering": self.maskset.ordering,
            "masks": len(self.spectrum),
            "pearson_r": self.pearson,
            "image_scaling": {name: _scaling(s) for name, s in self.scalings.items()},
        }


def _pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    # undefined for a constant image
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return None
    return float(pearsonr(a.ravel(), b.ravel())[0])


def run_spi(config: RunConfig, progress: bool = False) -> SpiResult:
    params = config.masks
    obj = build_object(config)
    emission = build_emission(config, obj)
    maskset = hadamard_masks(params.k, params.ordering, params.max_bytes)
    spectrum = acquire_spectrum(
        config.model,
        obj,
        emission,
        maskset,
        m=params.m,
        integration_time=config.integration,
        rng_seed=config.seed,
        noiseless=config.noiseless,
        acquisition=params.acquisition,
        workers=config.workers,
        progress=progress,
    )
    image = reconstruct(maskset, spectrum)
    truth = transparent_zone_map(obj, emission, maskset.side)
    r = _pearson(image, truth)
    logger.info("reconstructed %dx%d image from %d masks, pearson r=%s", maskset.side, maskset.side, len(spectrum), r)
    return SpiResult(maskset=maskset, spectrum=spectrum, image=image, truth=truth, pearson=r)


@dataclass
class SenseResult:
    present_rate: float
    absent_rate: float
    present_samples: np.ndarray
    absent_samples: np.ndarray
    present_hist: CountHistogram
    absent_hist: CountHistogram
    pair: GaussianPair
    threshold: float
    confidence: float
    empirical_error: float

    def save(self, out_dir: str) -> List[str]:
        paths = []
        for name, hist in (("present", self.present_hist), ("absent", self.absent_hist)):
            path = os.path.join(out_dir, f"histogram_{name}.csv")
            save_histogram(path, hist)
            paths.append(path)
        return paths

    def summary(self) -> Dict[str, Any]:
        return {
            "trials": int(self.present_samples.size),
            "present_rate": self.present_rate,
            "absent_rate": self.absent_rate,
            "fit": {
                "mu_absent": self.pair.mu_low,
                "sigma_absent": self.pair.sigma_low,
                "mu_present": self.pair.mu_high,
                "sigma_present": self.pair.sigma_high,
            },
            "separation_sigma": self.pair.separation,
            "threshold": self.threshold,
            "confidence": self.confidence,
            "empirical_error": self.empirical_error,
        }


def sensing_rates(config: RunConfig) -> Tuple[float, float]:
    """
    Class means: configured values, or from the model when unset. An object is detected at the
    fringe maximum theta=pi with phi=0; absence is the mean of the object-free fringe.
    """
    sp, model = config.sense, config.model
    present, absent = sp.present_rate, sp.absent_rate
    if present is None:
        r = idler_return_amplitude(model.ifm, 0.0, OPAQUE)
        present = float(signal_rate(sp.pair_rate, np.pi, r, model.signal_vis_factor, model.background_rate))
    if absent is None:
        absent = sp.pair_rate + model.background_rate
    return present, absent


def run_sense(config: RunConfig, trials: Optional[int] = None, progress: bool = False) -> SenseResult:
    sp = config.sense
    trials = sp.trials if trials is None else trials
    present_rate, absent_rate = sensing_rates(config)
    if present_rate <= absent_rate:
        raise InfeasibleThresholdError(
            f"object-present rate {present_rate} does not exceed the object-absent rate {absent_rate}"
        )

    present_seed, absent_seed = np.random.SeedSequence(config.seed).spawn(2)
    common = dict(integration=sp.integration, excess_noise=sp.excess_noise, workers=config.workers, progress=progress)
    present = simulate_trials(present_rate, trials, rng_seed=present_seed, **common)
    absent = simulate_trials(absent_rate, trials, rng_seed=absent_seed, **common)

    pair = fit_two_gaussians(present, absent)
    threshold = choose_threshold(pair, sp.k_sigma)
    conf = confidence(pair, threshold)
    err = empirical_error(present, absent, threshold)
    logger.info("threshold %.1f counts/s, confidence %.5f, empirical error %.2e", threshold, conf, err)
    return SenseResult(
        present_rate=present_rate,
        absent_rate=absent_rate,
        present_samples=present,
        absent_samples=absent,
        present_hist=histogram(present, sp.bin_width),
        absent_hist=histogram(absent, sp.bin_width),
        pair=pair,
        threshold=threshold,
        confidence=conf,
        empirical_error=err,
    )


@dataclass
class PhaseSimResult:
    text: str
    image_0: np.ndarray
    image_pi: np.ndarray
    difference: np.ndarray
    labels: np.ndarray
    scalings: Dict[str, ImageScaling] = field(default_factory=dict)

    def region_means(self) -> Dict[str, float]:
        means = {}
        for i, ch in enumerate(self.text):
            inside = self.labels == i
            if np.any(inside):
                means[f"{i}:{ch}"] = float(self.difference[inside].mean())
        means["background"] = float(self.difference[self.labels < 0].mean())
        return means

    def save(self, out_dir: str) -> List[str]:
        paths = []
        for name, frame in (
            ("phase_theta0", self.image_0),
            ("phase_thetapi", self.image_pi),
            ("phase_difference", self.difference),
        ):
            path = os.path.join(out_dir, f"{name}.pgm")
            self.scalings[name] = save_image(path, frame)
            paths.append(path)
        path = os.path.join(out_dir, "phase_regions.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["region", "mean_difference"])
            for region, value in self.region_means().items():
                writer.writerow([region, format(value, ".17g")])
        paths.append(path)
        return paths

    def summary(self) -> Dict[str, Any]:
        return {
            "region_difference": self.region_means(),
            "image_scaling": {name: _scaling(s) for name, s in self.scalings.items()},
        }


def run_phase_sim(config: RunConfig) -> PhaseSimResult:
    """
    Phase imaging without the IFM module: I(theta) = 2<N>[1 + T^2 cos(theta + 2*delta)] per
    pixel, so the theta=0 minus theta=pi difference is 4<N>T^2 cos(2*delta).
    """
    pconfig = config.phase
    plate, labels = make_text_plate(pconfig.text, pconfig.size, config.geometry.iccd_pitch_um)
    amplitude = np.zeros_like(plate.amplitude)
    phase = np.zeros_like(plate.phase)
    for i, ch in enumerate(pconfig.text):
        region = pconfig.regions.get(ch)
        if region is None:
            raise ConfigError(f"No transmission configured for region '{ch}' (phase.regions)")
        inside = labels == i
        amplitude[inside] = region.amplitude
        phase[inside] = region.phase

    px = PixelTransmission(amplitude, phase)
    r = direct_return_amplitude(px)
    baseline = 2.0 * pconfig.mean_counts
    streams = np.random.SeedSequence(config.seed).spawn(2)
    images = []
    for theta, stream in zip((0.0, np.pi), streams):
        image = np.asarray(signal_rate(baseline, theta, r, 1.0), dtype=float) * np.ones_like(amplitude)
        if not config.noiseless:
            image = _poisson(image, stream)
        images.append(image)
    return PhaseSimResult(
        text=pconfig.text, image_0=images[0], image_pi=images[1], difference=images[0] - images[1], labels=labels
    )


@dataclass
class CurveTable:
    thetas: np.ndarray
    columns: Dict[str, np.ndarray]
    visibilities: Dict[str, float]
    ifm_visibility: float

    def save(self, out_dir: str) -> List[str]:
        path = os.path.join(out_dir, "curves.csv")
        names = list(self.columns)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["theta"] + names)
            for i, theta in enumerate(self.thetas):
                writer.writerow([format(float(theta), ".17g")] + [format(float(self.columns[n][i]), ".17g") for n in names])
        return [path]

    def summary(self) -> Dict[str, Any]:
        return {"visibilities": self.visibilities, "ifm_visibility": self.ifm_visibility}


CURVE_CONDITIONS = (
    ("phi_pi", np.pi, CLEAR),
    ("phi_0", 0.0, CLEAR),
    ("object", 0.0, OPAQUE),
)


def run_curves(config: RunConfig, theta_samples: Optional[int] = None, channels: Optional[List[str]] = None) -> CurveTable:
    """
    Interference scans over theta for each detection channel at phi=pi and phi=0 without the
    object, and at phi=0 with an opaque object. The IFM detector is scanned over phi on the
    same grid.
    """
    samples = config.curves.samples if theta_samples is None else theta_samples
    channels = list(config.curves.channels) if channels is None else channels
    if samples < 1 or not channels:
        raise ConfigError("curve scan needs at least one theta sample and one channel")
    thetas = np.linspace(0.0, TWO_PI, samples, endpoint=False)

    columns: Dict[str, np.ndarray] = {}
    vis: Dict[str, float] = {}
    for channel in channels:
        for label, phi, px in CURVE_CONDITIONS:
            curve = interference_curve(config.model, config.curves.pair_rate, phi, px, thetas, channel)
            name = f"{channel}_{label}"
            columns[name] = curve
            vis[name] = visibility(curve)
    columns["ifm_clear"] = np.asarray(ifm_detector_rate(config.model.ifm, thetas, CLEAR), dtype=float)
    columns["ifm_object"] = np.asarray(ifm_detector_rate(config.model.ifm, thetas, OPAQUE), dtype=float)
    return CurveTable(thetas=thetas, columns=columns, visibilities=vis, ifm_visibility=ifm_visibility(config.model.ifm))


@dataclass
class ResolutionResult:
    sigma_um: float
    sigma_i_um: float
    modes: float
    frame: np.ndarray
    pitch_um: float
    fit: EsfFit
    scalings: Dict[str, ImageScaling] = field(default_factory=dict)

    def save(self, out_dir: str) -> List[str]:
        frame_path = os.path.join(out_dir, "knife_edge.pgm")
        self.scalings["knife_edge"] = save_image(frame_path, self.frame)
        esf_path = os.path.join(out_dir, "esf.csv")
        profile = self.frame.mean(axis=0)
        with open(esf_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x_um", "counts"])
            for col, value in enumerate(profile):
                writer.writerow([format(col * self.pitch_um, ".17g"), format(float(value), ".17g")])
        return [frame_path, esf_path]

    def summary(self) -> Dict[str, Any]:
        return {
            "sigma_um": self.sigma_um,
            "fitted_sigma_um": self.fit.sigma,
            "fit": {"a": self.fit.a, "b": self.fit.b, "x_c": self.fit.x_c, "sigma": self.fit.sigma},
            "sigma_i_um": self.sigma_i_um,
            "spatial_modes": self.modes,
            "image_scaling": {name: _scaling(s) for name, s in self.scalings.items()},
        }


def run_resolution(config: RunConfig) -> ResolutionResult:
    """Predicted edge width, a blurred knife edge and the width recovered from it."""
    geom = config.geometry
    sigma = edge_sigma(geom)
    sigma_i = fov_sigma_i(geom.f_i_mm, geom.lambda_i_nm, geom.pump_waist_um)
    modes = spatial_mode_count(geom.fov_um, sigma_i)

    size = config.resolution.size
    edge = size // 2 if config.object.edge_col is None else config.object.edge_col
    pitch = geom.iccd_pitch_um
    edge_map = make_knife_edge(size, size, edge, pitch)
    frame = blur(edge_map.amplitude * config.resolution.counts_scale, sigma, pitch)
    if not config.noiseless:
        frame = _poisson(frame, np.random.SeedSequence(config.seed))

    x = np.tile(np.arange(size) * pitch, size)
    fit = fit_esf(np.column_stack((x, frame.ravel())))
    logger.info("edge sigma %.2f um predicted, %.2f um fitted; %.0f spatial modes", sigma, fit.sigma, modes)
    return ResolutionResult(sigma_um=sigma, sigma_i_um=sigma_i, modes=modes, frame=frame, pitch_um=pitch, fit=fit)


@dataclass
class CalibrationReport:
    result: CalibrationResult
    visibilities: Dict[str, float]
    ifm_visibility: float

    def save(self, out_dir: str) -> List[str]:
        path = os.path.join(out_dir, "calibrated_model.json")
        with open(path, "w") as f:
            json.dump(self.result.model.model_dump(mode="json"), f, indent=4)
        return [path]

    def summary(self) -> Dict[str, Any]:
        return {
            "model": self.result.model.model_dump(mode="json"),
            "residuals": self.result.residuals,
            "feasible": self.result.feasible,
            "visibilities": self.visibilities,
            "ifm_visibility": self.ifm_visibility,
        }


def run_calibrate(config: RunConfig) -> CalibrationReport:
    result = calibrate_model(config.calibration, config.model.ifm, config.model.background_rate)
    return CalibrationReport(
        result=result,
        visibilities=signal_visibilities(result.model),
        ifm_visibility=ifm_visibility(result.model.ifm),
    )


@dataclass
class MaskExport:
    maskset: MaskSet
    count: int

    def save(self, out_dir: str) -> List[str]:
        return save_masks(os.path.join(out_dir, "masks"), self.maskset, self.count)

    def summary(self) -> Dict[str, Any]:
        return {"k": self.maskset.k, "ordering": self.maskset.ordering, "exported": self.count}


def export_masks(config: RunConfig) -> MaskExport:
    params = config.masks
    maskset = hadamard_masks(params.k, params.ordering, params.max_bytes)
    count = maskset.order if params.m is None else params.m
    return MaskExport(maskset=maskset, count=count)


RUNNERS: Dict[str, Callable[..., Any]] = {
    "iccd": lambda config, progress: run_iccd(config),
    "spi": lambda config, progress: run_spi(config, progress=progress),
    "sense": lambda config, progress: run_sense(config, progress=progress),
    "curves": lambda config, progress: run_curves(config),
    "phase-sim": lambda config, progress: run_phase_sim(config),
    "resolution": lambda config, progress: run_resolution(config),
    "calibrate": lambda config, progress: run_calibrate(config),
    "masks": lambda config, progress: export_masks(config),
}


def run_experiment(config: RunConfig, out_dir: str, progress: bool = False) -> Dict[str, Any]:
    """
    Run the configured mode, write its artifacts and summary.json into out_dir and return the summary.
    """
    os.makedirs(out_dir, exist_ok=True)
    start = time.perf_counter()
    result = RUNNERS[config.mode](config, progress)
    artifacts = result.save(out_dir)
    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        "results": result.summary(),
        "artifacts": [os.path.basename(p) for p in artifacts],
        "wall_clock_s": time.perf_counter() - start,
    }
    with open(os.path.join(out_dir, SUMMARY_FILE), "w") as f:
        json.dump(summary, f, indent=4)
    return summary
