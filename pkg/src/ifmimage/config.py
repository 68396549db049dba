import json
import math
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ifmimage.errors import ConfigError

DEFAULT_CONFIG_PATH = "~/.ifmimage/config.json"

Channel = Literal["signal", "idler", "coincidence"]
RunMode = Literal["iccd", "spi", "sense", "curves", "phase-sim", "resolution", "calibrate", "masks"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IfmConfig(_Section):
    """Beam splitter of the Michelson IFM module plus the arm-2 mode overlap."""

    transmissivity: float = Field(0.5, ge=0.0, le=1.0)
    reflectivity: float = Field(0.5, ge=0.0, le=1.0)
    mode_overlap: float = Field(1.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_energy(self) -> "IfmConfig":
        if self.transmissivity + self.reflectivity > 1.0 + 1e-12:
            raise ValueError("transmissivity + reflectivity must not exceed 1")
        return self


class InterferometerModel(_Section):
    """All physical parameters of the folded nonlinear interferometer with the IFM module."""

    ifm: IfmConfig = IfmConfig()
    signal_vis_factor: float = Field(1.0, ge=0.0, le=1.0)
    idler_vis_factor: float = Field(1.0, ge=0.0, le=1.0)
    coinc_vis_factor: float = Field(1.0, ge=0.0, le=1.0)
    background_rate: float = Field(0.0, ge=0.0)

    def vis_factor(self, channel: str) -> float:
        factors = {
            "signal": self.signal_vis_factor,
            "idler": self.idler_vis_factor,
            "coincidence": self.coinc_vis_factor,
        }
        if channel not in factors:
            raise ConfigError(f"Unknown channel '{channel}', expected one of {sorted(factors)}")
        return factors[channel]


class ImagingGeometry(_Section):
    # lengths in the units named by the suffix; defaults are the experimental values
    f_s_mm: float = Field(100.0, gt=0.0)
    f_i_mm: float = Field(100.0, gt=0.0)
    lambda_p_nm: float = Field(532.0, gt=0.0)
    lambda_s_nm: float = Field(810.0, gt=0.0)
    lambda_i_nm: float = Field(1550.0, gt=0.0)
    magnification: float = Field(0.4, gt=0.0)
    pump_waist_um: float = Field(171.0, gt=0.0)
    crystal_length_mm: float = Field(2.0, gt=0.0)
    iccd_pitch_um: float = Field(13.0, gt=0.0)
    slm_pitch_um: float = Field(32.4, gt=0.0)
    # back-solved so that (fov / sigma_i)^2 comes out near 948 modes
    fov_um: float = Field(6281.0, gt=0.0)


class ObjectSpec(_Section):
    pattern: Literal["glyph", "text", "knife-edge", "file", "uniform"] = "glyph"
    glyph: str = "U"
    text: str = "NJU"
    path: Optional[str] = None
    phase_path: Optional[str] = None
    threshold: Optional[int] = Field(None, ge=0)
    size: int = Field(64, ge=1)
    edge_col: Optional[int] = Field(None, ge=0)
    invert: bool = False

    @model_validator(mode="after")
    def _check_path(self) -> "ObjectSpec":
        if self.pattern == "file" and not self.path:
            raise ValueError("object.path is required when object.pattern is 'file'")
        return self


class EmissionSpec(_Section):
    profile: Literal["uniform", "gaussian"] = "uniform"
    rate: float = Field(50.0, ge=0.0)
    waist_px: Optional[float] = Field(None, gt=0.0)


class MaskParams(_Section):
    k: int = Field(6, ge=0)
    m: Optional[int] = Field(None, ge=0)
    ordering: Literal["sequency", "natural"] = "sequency"
    acquisition: Literal["ifm", "ic"] = "ifm"
    max_bytes: int = Field(2**28, gt=0)

    @model_validator(mode="after")
    def _check_count(self) -> "MaskParams":
        if self.m is not None and self.m > 4**self.k:
            raise ValueError(f"masks.m={self.m} exceeds the {4**self.k} masks of order k={self.k}")
        return self


class SenseParams(_Section):
    trials: int = Field(100_000, ge=100)
    # measured class means; set to null to derive them from the interferometer model
    present_rate: Optional[float] = Field(3500.0, ge=0.0)
    absent_rate: Optional[float] = Field(2950.0, ge=0.0)
    pair_rate: float = Field(2950.0, ge=0.0)
    excess_noise: float = Field(55.0, ge=0.0)
    k_sigma: float = Field(3.4, gt=0.0)
    bin_width: float = Field(20.0, gt=0.0)
    integration: float = Field(1.0, gt=0.0)


class CurveParams(_Section):
    samples: int = Field(64, ge=2)
    channels: List[Channel] = ["signal", "idler", "coincidence"]
    pair_rate: float = Field(1000.0, ge=0.0)


class RegionTransmission(_Section):
    amplitude: float = Field(1.0, ge=0.0, le=1.0)
    phase: float = 0.0


class PhaseImagingConfig(_Section):
    mean_counts: float = Field(50.0, ge=0.0)
    size: int = Field(512, ge=3)
    text: str = "NJU"
    regions: Dict[str, RegionTransmission] = {
        "N": RegionTransmission(amplitude=1.0, phase=0.0),
        "J": RegionTransmission(amplitude=1.0, phase=math.pi / 8),
        "U": RegionTransmission(amplitude=1.0, phase=math.pi / 4),
    }


class CalibrationTargets(_Section):
    # signal visibilities: (phi=pi, phi=0 without object, object present)
    signal: Tuple[float, float, float] = (0.693, 0.121, 0.223)
    idler: Optional[Tuple[float, float]] = (0.763, 0.255)
    coincidence: Optional[Tuple[float, float]] = (0.957, 0.248)
    tolerance: float = Field(0.05, gt=0.0)


class ResolutionParams(_Section):
    size: int = Field(64, ge=8)
    counts_scale: float = Field(1e4, gt=0.0)


class RunConfig(_Section):
    mode: RunMode = "iccd"
    model: InterferometerModel = InterferometerModel()
    geometry: ImagingGeometry = ImagingGeometry()
    object: ObjectSpec = ObjectSpec()
    emission: EmissionSpec = EmissionSpec()
    masks: MaskParams = MaskParams()
    sense: SenseParams = SenseParams()
    curves: CurveParams = CurveParams()
    phase: PhaseImagingConfig = PhaseImagingConfig()
    calibration: CalibrationTargets = CalibrationTargets()
    resolution: ResolutionParams = ResolutionParams()
    integration: float = Field(1.0, ge=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    noiseless: bool = True
    blur: bool = True
    workers: Optional[int] = Field(None, ge=1)
    color_scheme: str = "github-dark"

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "RunConfig":
        """
        Validate a nested dictionary into a RunConfig, raising ConfigError on failure.
        """
        try:
            return RunConfig.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(part) for part in first["loc"]) or "<root>"
            raise ConfigError(f"Invalid configuration at '{where}': {first['msg']}") from e

    @staticmethod
    def load_config(config_path: Optional[str] = None) -> "RunConfig":
        """
        Load configuration from a specified path or default ~/.ifmimage/config.json if it exists.
        JSON and YAML files are accepted; an explicitly named file that cannot be read is an error,
        a missing default file just means defaults.
        """
        explicit = config_path is not None
        if config_path is None:
            config_path = os.path.expanduser(DEFAULT_CONFIG_PATH)

        if not os.path.exists(config_path):
            if explicit:
                raise ConfigError(f"Config file '{config_path}' does not exist")
            return RunConfig()

        try:
            with open(config_path, "r") as f:
                if config_path.endswith((".yaml", ".yml")):
                    data = yaml.safe_load(f)
                else:
                    data = json.load(f)
        except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"Error loading config file '{config_path}': {e}") from e

        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"Config file '{config_path}' must contain a mapping at top level")
        return RunConfig.from_dict(data)

    def save_config(self, config_path: str) -> None:
        """
        Save the current configuration as JSON.
        """
        with open(config_path, "w") as f:
            json.dump(self.model_dump(mode="json"), f, indent=4)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """
        Return a copy with dotted-key overrides (e.g. {"masks.m": 1024}) applied and re-validated.
        """
        data = self.model_dump(mode="python")
        for key, value in overrides.items():
            parts = key.split(".")
            node = data
            for part in parts[:-1]:
                child = node.get(part)
                if not isinstance(child, dict):
                    raise ConfigError(f"Unknown configuration key '{key}'")
                node = child
            # region tables are open mappings, everything else is a fixed schema
            if parts[-1] not in node and parts[-2:-1] != ["regions"]:
                raise ConfigError(f"Unknown configuration key '{key}'")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def parse_override(text: str) -> Tuple[str, Any]:
    """
    Split a KEY=VALUE override; the value is parsed as YAML so numbers, booleans and lists work.
    """
    if "=" not in text:
        raise ConfigError(f"Override '{text}' is not of the form KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse value of override '{key}': {e}") from e
    return key.strip(), value
