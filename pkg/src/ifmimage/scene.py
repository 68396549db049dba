"""
scene.py: Object transmission maps, pair-emission maps and test patterns.

Rasters are grayscale PGM files read and written through Pillow. Binary plates are
thresholded to t in {0, 1}; a linear mode maps gray levels to grey transmissions.
"""

import io
import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from PIL import Image, UnidentifiedImageError

from ifmimage.core import PixelTransmission
from ifmimage.errors import ConfigError, DimensionMismatchError, InvalidParameterError, RasterParseError

logger = logging.getLogger(__name__)

RasterSource = Union[str, os.PathLike, bytes]

# Block-letter approximations of the characters on the plate, 'X' = transparent.
GLYPHS: Dict[str, Tuple[str, ...]] = {
    "N": (
        "XX........XX",
        "XXX.......XX",
        "XXXX......XX",
        "XX.XX.....XX",
        "XX..XX....XX",
        "XX...XX...XX",
        "XX....XX..XX",
        "XX.....XX.XX",
        "XX......XXXX",
        "XX.......XXX",
        "XX........XX",
        "XX........XX",
    ),
    "J": (
        "..XXXXXXXXXX",
        "..XXXXXXXXXX",
        ".......XX...",
        ".......XX...",
        ".......XX...",
        ".......XX...",
        ".......XX...",
        ".......XX...",
        "XX.....XX...",
        "XX.....XX...",
        ".XXXXXXX....",
        "..XXXXX.....",
    ),
    "U": (
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XX........XX",
        "XXX......XXX",
        ".XXXXXXXXXX.",
        "..XXXXXXXX..",
    ),
}


@dataclass(frozen=True, eq=False)
class ObjectMap:
    """Per-pixel complex transmission t*exp(i*delta) of the object, stored as two (height, width) arrays."""

    amplitude: np.ndarray
    phase: np.ndarray
    pixel_pitch_um: float = 13.0

    def __post_init__(self) -> None:
        if self.amplitude.ndim != 2 or self.amplitude.shape != self.phase.shape:
            raise DimensionMismatchError("object amplitude and phase must be 2-D grids of equal shape")
        if self.amplitude.size == 0:
            raise InvalidParameterError("object map must have at least one pixel")
        if np.any(self.amplitude < 0.0) or np.any(self.amplitude > 1.0):
            raise InvalidParameterError("object amplitude transmission must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.amplitude.shape[0]

    @property
    def width(self) -> int:
        return self.amplitude.shape[1]

    @property
    def transmission(self) -> PixelTransmission:
        return PixelTransmission(self.amplitude, self.phase)

    def inverted(self) -> "ObjectMap":
        return ObjectMap(1.0 - self.amplitude, self.phase.copy(), self.pixel_pitch_um)


@dataclass(frozen=True, eq=False)
class EmissionMap:
    """Pair-emission rate P(x, y) in counts/s per pixel."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        if self.rates.ndim != 2:
            raise DimensionMismatchError("emission map must be a 2-D grid")
        if np.any(self.rates < 0.0):
            raise InvalidParameterError("emission rates must be non-negative")

    @property
    def height(self) -> int:
        return self.rates.shape[0]

    @property
    def width(self) -> int:
        return self.rates.shape[1]

    def check_matches(self, obj: ObjectMap) -> None:
        if self.rates.shape != obj.amplitude.shape:
            raise DimensionMismatchError(
                f"emission map {self.rates.shape} does not match object map {obj.amplitude.shape}"
            )


@dataclass(frozen=True)
class ImageScaling:
    """Maps stored 16-bit levels back to physical values: value = offset + level * scale."""

    offset: float
    scale: float


def _open_raster(source: RasterSource) -> Tuple[np.ndarray, int]:
    """
    Decode a grayscale raster and return (levels, maxval). 8-bit files come back on 0..255,
    16-bit files on 0..65535.
    """
    try:
        handle = io.BytesIO(source) if isinstance(source, bytes) else source
        with Image.open(handle) as img:
            img.load()
            if img.mode == "1":
                img = img.convert("L")
            if img.mode == "L":
                return np.asarray(img, dtype=np.int64), 255
            if img.mode in ("I", "I;16", "I;16B"):
                return np.asarray(img, dtype=np.int64), 65535
            raise RasterParseError(f"raster mode '{img.mode}' is not grayscale")
    except RasterParseError:
        raise
    except FileNotFoundError as e:
        raise ConfigError(f"raster file not found: {source!r}") from e
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as e:
        raise RasterParseError(f"cannot decode raster: {e}") from e


def load_object(
    source: RasterSource,
    threshold: Optional[int] = None,
    phase_source: Optional[RasterSource] = None,
    linear: bool = False,
    pixel_pitch_um: float = 13.0,
) -> ObjectMap:
    """
    Build an object map from a grayscale raster.

    Args:
        source: path or raw bytes of a PGM (P2/P5, 8 or 16 bit).
        threshold: level at or above which a pixel is transparent; defaults to mid-scale.
        phase_source: optional raster mapped linearly from [0, maxval] onto [0, 2*pi).
        linear: map gray levels linearly onto t in [0, 1] instead of thresholding.
    """
    levels, maxval = _open_raster(source)
    if linear:
        amplitude = levels.astype(float) / maxval
    else:
        if threshold is None:
            threshold = (maxval + 1) // 2
        if not 0 <= threshold <= maxval:
            raise InvalidParameterError(f"threshold {threshold} outside the raster range 0..{maxval}")
        amplitude = (levels >= threshold).astype(float)

    phase = np.zeros_like(amplitude)
    if phase_source is not None:
        phase_levels, phase_max = _open_raster(phase_source)
        if phase_levels.shape != levels.shape:
            raise ConfigError(
                f"phase raster {phase_levels.shape} does not match amplitude raster {levels.shape}"
            )
        phase = 2.0 * np.pi * phase_levels.astype(float) / (phase_max + 1)

    logger.debug("loaded object %dx%d, transparent fraction %.3f", levels.shape[1], levels.shape[0], amplitude.mean())
    return ObjectMap(amplitude, phase, pixel_pitch_um)


def _write_pgm(path: Union[str, os.PathLike], levels: np.ndarray) -> None:
    # Pillow writes "L" as 8-bit P5 and "I" as 16-bit P5 (maxval 65535)
    Image.fromarray(levels).save(path, format="PPM")


def save_object(path: Union[str, os.PathLike], obj: ObjectMap, sixteen_bit: bool = False) -> None:
    """Write the amplitude map as a P5 raster; binary maps round-trip through load_object exactly."""
    if sixteen_bit:
        _write_pgm(path, np.rint(obj.amplitude * 65535).astype(np.int32))
    else:
        _write_pgm(path, np.rint(obj.amplitude * 255).astype(np.uint8))


def save_image(path: Union[str, os.PathLike], image: ArrayLike) -> ImageScaling:
    """
    Write a float image as a 16-bit P5 raster, min -> 0 and max -> 65535.
    The returned scaling recovers physical values from the stored levels.
    """
    data = np.asarray(image, dtype=float)
    lo, hi = float(data.min()), float(data.max())
    scale = (hi - lo) / 65535 if hi > lo else 1.0
    levels = np.rint((data - lo) / scale).astype(np.int32)
    _write_pgm(path, levels)
    return ImageScaling(offset=lo, scale=scale)


def make_knife_edge(width: int, height: int, edge_col: int, pixel_pitch_um: float = 13.0) -> ObjectMap:
    """Columns left of edge_col are opaque, the rest transparent."""
    if not 0 <= edge_col <= width:
        raise InvalidParameterError(f"edge column {edge_col} outside 0..{width}")
    amplitude = np.ones((height, width))
    amplitude[:, :edge_col] = 0.0
    return ObjectMap(amplitude, np.zeros_like(amplitude), pixel_pitch_um)


def glyph_bitmap(glyph: Union[str, ArrayLike]) -> np.ndarray:
    if isinstance(glyph, str):
        if glyph.upper() not in GLYPHS:
            raise InvalidParameterError(f"no shipped bitmap for glyph '{glyph}', choose from {sorted(GLYPHS)}")
        rows = GLYPHS[glyph.upper()]
        return np.array([[c == "X" for c in row] for row in rows], dtype=bool)
    bitmap = np.asarray(glyph, dtype=bool)
    if bitmap.ndim != 2:
        raise InvalidParameterError("custom glyph bitmap must be 2-D")
    return bitmap


def _canvas_shape(canvas: Union[int, Sequence[int]]) -> Tuple[int, int]:
    if isinstance(canvas, int):
        return canvas, canvas
    width, height = canvas
    return int(width), int(height)


def _auto_scale(bitmap: np.ndarray, width: int, height: int) -> int:
    # leave a margin of roughly an eighth of the canvas on each side
    usable_w, usable_h = width - 2 * (width // 8), height - 2 * (height // 8)
    return max(1, min(usable_w // bitmap.shape[1], usable_h // bitmap.shape[0]))


def _stamp(target: np.ndarray, bitmap: np.ndarray, top: int, left: int) -> None:
    target[top : top + bitmap.shape[0], left : left + bitmap.shape[1]] |= bitmap


def make_glyph_plate(
    glyph: Union[str, ArrayLike],
    canvas: Union[int, Sequence[int]] = 64,
    scale: Optional[int] = None,
    invert: bool = False,
    pixel_pitch_um: float = 13.0,
) -> ObjectMap:
    """
    Transparent glyph on an opaque plate, centred on the canvas.
    Shipped glyphs are scaled up by an integer factor to fill the canvas; custom bitmaps are
    stamped at their native size unless a scale is given.
    """
    width, height = _canvas_shape(canvas)
    bitmap = glyph_bitmap(glyph)
    if scale is None:
        scale = _auto_scale(bitmap, width, height) if isinstance(glyph, str) else 1
    bitmap = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
    if bitmap.shape[0] > height or bitmap.shape[1] > width:
        raise DimensionMismatchError(f"glyph bitmap {bitmap.shape} larger than canvas {(height, width)}")

    mask = np.zeros((height, width), dtype=bool)
    _stamp(mask, bitmap, (height - bitmap.shape[0]) // 2, (width - bitmap.shape[1]) // 2)
    if invert:
        mask = ~mask
    amplitude = mask.astype(float)
    return ObjectMap(amplitude, np.zeros_like(amplitude), pixel_pitch_um)


def make_text_plate(
    text: str, canvas: Union[int, Sequence[int]] = 512, pixel_pitch_um: float = 13.0
) -> Tuple[ObjectMap, np.ndarray]:
    """
    Lay several shipped glyphs side by side, one cell per character.

    Returns:
        The binary plate and a label grid holding the character index per transparent pixel
        (-1 on the opaque background).
    """
    width, height = _canvas_shape(canvas)
    if not text:
        raise InvalidParameterError("text plate needs at least one character")
    cell_w = width // len(text)
    bitmaps = [glyph_bitmap(c) for c in text]
    side = max(b.shape[0] for b in bitmaps)
    scale = max(1, (min(cell_w, height) * 3 // 4) // side)

    labels = np.full((height, width), -1, dtype=np.int64)
    for i, bitmap in enumerate(bitmaps):
        big = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
        if big.shape[0] > height or big.shape[1] > cell_w:
            raise DimensionMismatchError(f"text '{text}' does not fit a {width}x{height} canvas")
        top = (height - big.shape[0]) // 2
        left = i * cell_w + (cell_w - big.shape[1]) // 2
        region = labels[top : top + big.shape[0], left : left + big.shape[1]]
        region[big] = i

    amplitude = (labels >= 0).astype(float)
    return ObjectMap(amplitude, np.zeros_like(amplitude), pixel_pitch_um), labels


def uniform_emission(width: int, height: int, rate: float) -> EmissionMap:
    if rate < 0.0:
        raise InvalidParameterError("emission rate must be non-negative")
    return EmissionMap(np.full((height, width), float(rate)))


def gaussian_emission(width: int, height: int, rate: float, waist_px: float) -> EmissionMap:
    """Gaussian pump profile with peak rate at the grid centre: rate * exp(-2 r^2 / w^2)."""
    if rate < 0.0:
        raise InvalidParameterError("emission rate must be non-negative")
    if waist_px <= 0.0:
        raise InvalidParameterError("pump waist must be positive")
    y, x = np.mgrid[0:height, 0:width]
    r2 = (x - (width - 1) / 2.0) ** 2 + (y - (height - 1) / 2.0) ** 2
    return EmissionMap(rate * np.exp(-2.0 * r2 / waist_px**2))
