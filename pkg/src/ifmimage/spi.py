"""
spi.py: Hadamard single-pixel acquisition and reconstruction.

Each +/-1 mask is displayed as the complementary 0/1 pair (M+, M-) and the bucket detector
reads C = C+ - C-. Per mask the phase settings are combined as

    C_M = C(0, pi) - C(pi, pi) - C(pi, 0) + C(0, 0)

with the IFM module in place, or C_M = C(0) - C(pi) for the bare induced-coherence set-up.
Noisy acquisitions draw every physical detection from its own Poisson distribution, with
one RNG stream per mask spawned from the run seed, so results do not depend on how the
masks are scheduled across workers.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from scipy.linalg import hadamard
from tqdm import tqdm

from ifmimage.config import InterferometerModel
from ifmimage.core import (
    IC_SETTINGS,
    SPI_SETTINGS,
    direct_return_amplitude,
    idler_return_amplitude,
    signal_rate,
)
from ifmimage.errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidParameterError,
    ResourceLimitError,
)
from ifmimage.scene import EmissionMap, ObjectMap

logger = logging.getLogger(__name__)

Ordering = Literal["sequency", "natural"]
Acquisition = Literal["ifm", "ic"]
SeedLike = Union[int, np.random.SeedSequence, None]

DEFAULT_MAX_BYTES = 2**28
CHUNK = 256


@dataclass(frozen=True, eq=False)
class MaskSet:
    """
    Hadamard masks of side n = 2^k (N = 4^k of them) in acquisition order.
    `matrix` holds the flattened masks row by row; `indices` are their natural (Sylvester) row numbers.
    """

    k: int
    ordering: str
    indices: np.ndarray
    matrix: np.ndarray

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    @property
    def side(self) -> int:
        return 2**self.k

    @property
    def masks(self) -> np.ndarray:
        return self.matrix.reshape(self.order, self.side, self.side)

    def mask(self, position: int) -> np.ndarray:
        return self.matrix[position].reshape(self.side, self.side)

    def rows_for(self, natural_indices: np.ndarray) -> np.ndarray:
        position = np.empty(self.order, dtype=np.int64)
        position[self.indices] = np.arange(self.order)
        return self.matrix[position[natural_indices]]


@dataclass(frozen=True, eq=False)
class HadamardSpectrum:
    """Measured coefficient per mask, keyed by the mask's natural Hadamard index."""

    indices: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        if self.indices.shape != self.coefficients.shape or self.indices.ndim != 1:
            raise DimensionMismatchError("spectrum indices and coefficients must be 1-D and of equal length")

    def __len__(self) -> int:
        return int(self.coefficients.shape[0])


def sign_changes(matrix: np.ndarray, side: int) -> np.ndarray:
    """Number of sign flips between horizontally and vertically adjacent pixels of each mask."""
    blocks = matrix.reshape(-1, side, side)
    horizontal = np.count_nonzero(np.diff(blocks, axis=2), axis=(1, 2))
    vertical = np.count_nonzero(np.diff(blocks, axis=1), axis=(1, 2))
    return horizontal + vertical


def hadamard_masks(k: int, ordering: Ordering = "sequency", max_bytes: int = DEFAULT_MAX_BYTES) -> MaskSet:
    """
    Sylvester Hadamard masks of side 2^k. Row i of H_{4^k} reshaped row-major is the outer
    product of two rows of H_{2^k}, i.e. a separable 2-D Walsh pattern.
    Sequency ordering sorts by the number of sign changes, natural index breaking ties.
    """
    if k < 0:
        raise InvalidParameterError("mask scale k must be non-negative")
    order = 4**k
    if order * order > max_bytes:
        raise ResourceLimitError(
            f"{order} masks of {order} pixels need {order * order} bytes, above the {max_bytes} byte budget"
        )
    matrix = hadamard(order, dtype=np.int8)
    natural = np.arange(order)
    if ordering == "sequency":
        idx = np.lexsort((natural, sign_changes(matrix, 2**k)))
    elif ordering == "natural":
        idx = natural
    else:
        raise ConfigError(f"Unknown mask ordering '{ordering}'")
    logger.debug("generated %d masks of %dx%d in %s order", order, 2**k, 2**k, ordering)
    return MaskSet(k=k, ordering=ordering, indices=idx, matrix=np.ascontiguousarray(matrix[idx]))


def to_mask_grid(image: np.ndarray, side: int) -> np.ndarray:
    """
    Map a per-pixel rate grid onto the side x side mask grid. A larger grid is summed in f x f
    blocks; a smaller one is spread over f x f mask pixels at 1/f^2 of its rate. Either way the
    total flux is unchanged.
    """
    height, width = image.shape
    if height != width or (height % side != 0 and side % height != 0):
        raise DimensionMismatchError(
            f"object grid {width}x{height} and the {side}x{side} mask grid differ by a non-integer factor"
        )
    if height >= side:
        f = height // side
        return image.reshape(side, f, side, f).sum(axis=(1, 3))
    f = side // height
    return np.kron(image, np.full((f, f), 1.0 / (f * f)))


def setting_maps(
    model: InterferometerModel,
    obj: ObjectMap,
    emission: EmissionMap,
    side: int,
    acquisition: Acquisition = "ifm",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Expected signal rate per mask pixel for every phase setting of the acquisition rule.

    Returns:
        (maps, signs): maps has shape (settings, side*side); signs the +/-1 weight of each setting.
    """
    emission.check_matches(obj)
    px = obj.transmission
    if acquisition == "ifm":
        settings = SPI_SETTINGS
    elif acquisition == "ic":
        settings = IC_SETTINGS
    else:
        raise ConfigError(f"Unknown acquisition rule '{acquisition}'")

    maps, signs = [], []
    for phases, sign in settings:
        if acquisition == "ifm":
            r = idler_return_amplitude(model.ifm, phases.phi, px)
        else:
            r = direct_return_amplitude(px)
        rate = signal_rate(emission.rates, phases.theta, r, model.signal_vis_factor, model.background_rate)
        maps.append(to_mask_grid(np.asarray(rate, dtype=float), side).ravel())
        signs.append(sign)
    return np.array(maps), np.array(signs, dtype=float)


def _draw(lam: np.ndarray, signs: np.ndarray, seed: Union[int, np.random.SeedSequence, None]) -> float:
    # lam has shape (settings, 2): expected counts behind M+ and M-
    rng = np.random.default_rng(seed)
    counts = rng.poisson(np.maximum(lam, 0.0))
    return float(np.dot(signs, counts[:, 0] - counts[:, 1]))


def _pair_expectations(rows: np.ndarray, maps: np.ndarray, integration_time: float) -> np.ndarray:
    total = maps.sum(axis=1)
    proj = rows.astype(float) @ maps.T
    plus = 0.5 * (total + proj) * integration_time
    minus = 0.5 * (total - proj) * integration_time
    return np.stack([plus, minus], axis=-1)


def measure_mask(
    model: InterferometerModel,
    obj: ObjectMap,
    emission: EmissionMap,
    mask: np.ndarray,
    integration_time: float = 1.0,
    rng_seed: SeedLike = None,
    noiseless: bool = True,
    acquisition: Acquisition = "ifm",
) -> float:
    """Signed count C_M of a single +/-1 mask."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise DimensionMismatchError("mask must be a square 2-D grid")
    if integration_time < 0.0:
        raise InvalidParameterError("integration time must be non-negative")
    maps, signs = setting_maps(model, obj, emission, mask.shape[0], acquisition)
    row = mask.reshape(1, -1)
    if noiseless:
        return float(signs @ (row.astype(float) @ maps.T)[0] * integration_time)
    return _draw(_pair_expectations(row, maps, integration_time)[0], signs, rng_seed)


def measure_mask_ic(
    model: InterferometerModel,
    obj: ObjectMap,
    emission: EmissionMap,
    mask: np.ndarray,
    integration_time: float = 1.0,
    rng_seed: SeedLike = None,
    noiseless: bool = True,
) -> float:
    """C_max - C_min of one mask with the object double-passed directly (no IFM module)."""
    return measure_mask(model, obj, emission, mask, integration_time, rng_seed, noiseless, acquisition="ic")


def acquire_spectrum(
    model: InterferometerModel,
    obj: ObjectMap,
    emission: EmissionMap,
    maskset: MaskSet,
    m: Optional[int] = None,
    integration_time: float = 1.0,
    rng_seed: int = 0,
    noiseless: bool = True,
    acquisition: Acquisition = "ifm",
    workers: Optional[int] = None,
    progress: bool = False,
) -> HadamardSpectrum:
    """
    Measure the first m masks of the set in its acquisition order.
    The coefficient at position i uses the i-th child of the run seed, so a prefix of a longer
    acquisition is identical to a shorter one.
    """
    m = maskset.order if m is None else m
    if not 0 <= m <= maskset.order:
        raise InvalidParameterError(f"cannot acquire {m} of {maskset.order} masks")
    if integration_time < 0.0:
        raise InvalidParameterError("integration time must be non-negative")

    maps, signs = setting_maps(model, obj, emission, maskset.side, acquisition)
    combined = signs @ maps
    children = np.random.SeedSequence(rng_seed).spawn(m) if not noiseless else []
    coefficients = np.zeros(m)

    def run_chunk(start: int) -> None:
        stop = min(start + CHUNK, m)
        rows = maskset.matrix[start:stop]
        if noiseless:
            coefficients[start:stop] = (rows.astype(float) @ combined) * integration_time
            return
        lam = _pair_expectations(rows, maps, integration_time)
        for offset in range(stop - start):
            coefficients[start + offset] = _draw(lam[offset], signs, children[start + offset])

    starts = range(0, m, CHUNK)
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
        for _ in tqdm(pool.map(run_chunk, starts), total=len(starts), desc="masks", disable=not progress):
            pass

    logger.info("acquired %d masks (%s, %s)", m, acquisition, "noiseless" if noiseless else "Poisson")
    return HadamardSpectrum(indices=maskset.indices[:m].copy(), coefficients=coefficients)


def reconstruct(maskset: MaskSet, spectrum: HadamardSpectrum) -> np.ndarray:
    """Weighted mask sum (1/N) * sum_i w_i * M_i."""
    if len(spectrum) > maskset.order:
        raise DimensionMismatchError(f"spectrum of length {len(spectrum)} exceeds the {maskset.order} masks")
    if len(spectrum) and (spectrum.indices.min() < 0 or spectrum.indices.max() >= maskset.order):
        raise DimensionMismatchError("spectrum refers to masks outside the mask set")
    image = np.zeros(maskset.order)
    rows = maskset.rows_for(spectrum.indices)
    for start in range(0, len(spectrum), CHUNK):
        image += spectrum.coefficients[start : start + CHUNK] @ rows[start : start + CHUNK].astype(float)
    return (image / maskset.order).reshape(maskset.side, maskset.side)


def spectrum_grid(spectrum: HadamardSpectrum, side: int) -> np.ndarray:
    """Place every coefficient at its natural Hadamard position on a side x side grid."""
    grid = np.zeros(side * side)
    grid[spectrum.indices] = spectrum.coefficients
    return grid.reshape(side, side)


def save_spectrum(path: Union[str, os.PathLike], spectrum: HadamardSpectrum) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "coefficient"])
        for index, value in zip(spectrum.indices, spectrum.coefficients):
            writer.writerow([int(index), format(float(value), ".17g")])


def load_spectrum(path: Union[str, os.PathLike]) -> HadamardSpectrum:
    try:
        with open(path, "r", newline="") as f:
            rows = list(csv.DictReader(f))
        indices = np.array([int(row["index"]) for row in rows], dtype=np.int64)
        coefficients = np.array([float(row["coefficient"]) for row in rows], dtype=float)
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"Cannot read spectrum CSV '{path}': {e}") from e
    return HadamardSpectrum(indices=indices, coefficients=coefficients)


def save_masks(directory: Union[str, os.PathLike], maskset: MaskSet, count: Optional[int] = None) -> List[str]:
    """Write the first `count` masks as 8-bit PGM files, +1 -> 255 and -1 -> 0."""
    # imported here to keep the raster writer in one place
    from ifmimage.scene import _write_pgm

    count = maskset.order if count is None else min(count, maskset.order)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for position in range(count):
        path = os.path.join(directory, f"mask_{position:05d}.pgm")
        levels = np.where(maskset.mask(position) > 0, 255, 0).astype(np.uint8)
        _write_pgm(path, levels)
        paths.append(path)
    return paths
