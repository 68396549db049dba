"""
sensing.py: Photon-counting statistics for interaction-free sensing.

Object-present and object-absent count samples are labeled, so each class gets its own
Gaussian. The threshold sits where both classes are the same number of their own standard
deviations away, and the confidence integrates the two Gaussians on the correct side.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import norm
from tqdm import tqdm

from ifmimage.errors import FitError, InfeasibleThresholdError, InvalidParameterError

logger = logging.getLogger(__name__)

Decision = Literal["present", "absent"]

MIN_CLASS_SAMPLES = 30
TRIAL_BLOCK = 4096


@dataclass(frozen=True)
class CountHistogram:
    bin_width: float
    bins: List[Tuple[float, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(freq for _, freq in self.bins)


@dataclass(frozen=True)
class GaussianPair:
    mu_low: float
    sigma_low: float
    mu_high: float
    sigma_high: float
    w_low: float = 0.5
    w_high: float = 0.5

    def __post_init__(self) -> None:
        if self.sigma_low <= 0.0 or self.sigma_high <= 0.0:
            raise FitError("class widths must be positive", {"sigma_low": self.sigma_low, "sigma_high": self.sigma_high})
        if not self.mu_low < self.mu_high:
            raise FitError(
                "object-absent mean must lie below the object-present mean",
                {"mu_low": self.mu_low, "mu_high": self.mu_high},
            )
        if abs(self.w_low + self.w_high - 1.0) > 1e-9 or self.w_low < 0.0 or self.w_high < 0.0:
            raise InvalidParameterError("class weights must be probabilities summing to 1")

    @property
    def separation(self) -> float:
        """Distance of the means in units of sigma_low + sigma_high."""
        return (self.mu_high - self.mu_low) / (self.sigma_low + self.sigma_high)


def sample_counts(
    rate: ArrayLike, integration: float, rng: np.random.Generator, size: Optional[int] = None
) -> Union[int, np.ndarray]:
    """Poisson photon counts with mean rate * integration."""
    lam = np.asarray(rate, dtype=float) * integration
    if np.any(lam < 0.0) or integration < 0.0:
        raise InvalidParameterError("count rate and integration time must be non-negative")
    return rng.poisson(lam, size=size)


def simulate_trials(
    rate: float,
    trials: int,
    integration: float = 1.0,
    excess_noise: float = 0.0,
    rng_seed: Union[int, np.random.SeedSequence] = 0,
    workers: Optional[int] = None,
    progress: bool = False,
) -> np.ndarray:
    """
    Count-rate samples of repeated trials: Poisson counts per integration window converted
    back to counts/s, plus optional Gaussian excess noise of `excess_noise` counts/s.
    Trials are drawn in fixed blocks, each with its own child seed, so the result does not
    depend on the number of workers.
    """
    if trials < 0:
        raise InvalidParameterError("number of trials must be non-negative")
    if integration <= 0.0:
        raise InvalidParameterError("integration time must be positive")
    if excess_noise < 0.0:
        raise InvalidParameterError("excess noise must be non-negative")

    seed = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    starts = list(range(0, trials, TRIAL_BLOCK))
    children = seed.spawn(len(starts))
    out = np.empty(trials)

    def run_block(i: int) -> None:
        start = starts[i]
        stop = min(start + TRIAL_BLOCK, trials)
        rng = np.random.default_rng(children[i])
        counts = sample_counts(rate, integration, rng, size=stop - start)
        samples = counts / integration
        if excess_noise > 0.0:
            samples = samples + rng.normal(0.0, excess_noise, size=stop - start)
        out[start:stop] = samples

    with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
        for _ in tqdm(pool.map(run_block, range(len(starts))), total=len(starts), desc="trials", disable=not progress):
            pass
    return out


def fit_two_gaussians(present_samples: ArrayLike, absent_samples: ArrayLike) -> GaussianPair:
    """
    Per-class sample mean and standard deviation of labeled samples.
    Class weights follow the sample counts.
    """
    present = np.asarray(present_samples, dtype=float).ravel()
    absent = np.asarray(absent_samples, dtype=float).ravel()
    for name, samples in (("present", present), ("absent", absent)):
        if samples.size < MIN_CLASS_SAMPLES:
            raise FitError(
                f"{name} class has {samples.size} samples, at least {MIN_CLASS_SAMPLES} are needed",
                {"class": name, "samples": int(samples.size)},
            )

    mu_high, sigma_high = float(present.mean()), float(present.std(ddof=1))
    mu_low, sigma_low = float(absent.mean()), float(absent.std(ddof=1))
    if sigma_high == 0.0 or sigma_low == 0.0:
        raise FitError("a class has zero variance", {"sigma_low": sigma_low, "sigma_high": sigma_high})
    if not mu_low < mu_high:
        raise FitError(
            "present and absent classes are not separated", {"mu_low": mu_low, "mu_high": mu_high}
        )

    n = present.size + absent.size
    pair = GaussianPair(
        mu_low=mu_low,
        sigma_low=sigma_low,
        mu_high=mu_high,
        sigma_high=sigma_high,
        w_low=absent.size / n,
        w_high=present.size / n,
    )
    logger.debug("fitted classes: absent %.1f +/- %.1f, present %.1f +/- %.1f", mu_low, sigma_low, mu_high, sigma_high)
    return pair


def choose_threshold(pair: GaussianPair, k_sigma: float) -> float:
    """
    Threshold x* with (x* - mu_low)/sigma_low = (mu_high - x*)/sigma_high.
    Both classes then sit `separation` of their own sigmas from x*, which must reach k_sigma.
    """
    if k_sigma <= 0.0:
        raise InvalidParameterError("k_sigma must be positive")
    k = pair.separation
    if k < k_sigma:
        raise InfeasibleThresholdError(
            f"classes are {k:.3f} sigma from the threshold, below the requested {k_sigma}"
        )
    return (pair.mu_low * pair.sigma_high + pair.mu_high * pair.sigma_low) / (pair.sigma_low + pair.sigma_high)


def confidence(pair: GaussianPair, threshold: float) -> float:
    """Weighted probability of classifying a trial correctly."""
    p_absent = norm.cdf((threshold - pair.mu_low) / pair.sigma_low)
    p_present = norm.cdf((pair.mu_high - threshold) / pair.sigma_high)
    return float(pair.w_low * p_absent + pair.w_high * p_present)


def decide(count: float, threshold: float) -> Decision:
    # a count exactly on the threshold is absent
    return "present" if count > threshold else "absent"


def empirical_error(present_samples: ArrayLike, absent_samples: ArrayLike, threshold: float) -> float:
    """Fraction of all trials that `decide` gets wrong."""
    present = np.asarray(present_samples, dtype=float).ravel()
    absent = np.asarray(absent_samples, dtype=float).ravel()
    total = present.size + absent.size
    if total == 0:
        raise InvalidParameterError("no samples to classify")
    wrong = np.count_nonzero(present <= threshold) + np.count_nonzero(absent > threshold)
    return wrong / total


def histogram(samples: ArrayLike, bin_width: float = 20.0, origin: float = 0.0) -> CountHistogram:
    """Contiguous bins of `bin_width` aligned to `origin`, covering all samples."""
    if bin_width <= 0.0:
        raise InvalidParameterError("bin width must be positive")
    data = np.asarray(samples, dtype=float).ravel()
    if data.size == 0:
        return CountHistogram(bin_width=bin_width)
    first = np.floor((data.min() - origin) / bin_width)
    last = np.floor((data.max() - origin) / bin_width)
    edges = origin + bin_width * np.arange(first, last + 2)
    freq, _ = np.histogram(data, bins=edges)
    return CountHistogram(
        bin_width=bin_width,
        bins=[(float(edge), int(f)) for edge, f in zip(edges[:-1], freq)],
    )


def save_histogram(path: Union[str, os.PathLike], hist: CountHistogram) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lower_edge", "frequency"])
        for edge, freq in hist.bins:
            writer.writerow([format(edge, ".17g"), freq])
