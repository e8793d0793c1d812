"""
Configuration models and TOML loading.

A single TOML file mirrors the field names below, one table per concern
(``[channel]``, ``[embed]``, ``[jnd]``, ``[locate]``, ``[anticrop]``,
``[logging]``). CLI flags are applied on top with ``apply_overrides``.
"""

import math
import os
import tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import structlog
import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from screenmark.errors import ConfigError, ImageIOError
from screenmark.jnd import JndParams

DEFAULT_CONFIG_PATH = "config.toml"
THREADS_ENV = "SCREENMARK_THREADS"

logger = structlog.get_logger("config")


class Ramp(BaseModel):
    """Linear schedule: the active limit grows from 0 to ``limit`` over ``steps`` steps."""

    model_config = ConfigDict(frozen=True)

    steps: int = Field(..., ge=1, description="Steps until the limit is reached")
    limit: float = Field(..., ge=0.0, description="Value at the end of the ramp")

    def at(self, step: int) -> float:
        return self.limit * min(1.0, max(step, 0) / self.steps)


class BlurConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_kernel: int = Field(default=5, ge=3, description="Largest odd kernel size N_k")
    defocus_ramp: Ramp = Field(default=Ramp(steps=1000, limit=1.5), description="Defocus sigma schedule")
    motion_sigma: Tuple[float, float] = Field(default=(0.5, 1.5), description="Motion blur sigma range")

    @field_validator("max_kernel")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("max_kernel must be odd")
        return v

    @field_validator("motion_sigma")
    @classmethod
    def _sigma_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not 0.0 < v[0] <= v[1]:
            raise ValueError("motion_sigma must be an increasing positive range")
        return v


class ChannelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0, lt=2**64, description="Generator seed")
    step: int = Field(default=0, ge=0, description="Training-step index driving the ramps")
    total_steps: int = Field(default=175_000, ge=1, description="Schedule length; moire activates in the second half")
    brightness_ramp: Ramp = Field(default=Ramp(steps=100, limit=24.0), description="Max |theta2| in gray levels")
    contrast_ramp: Ramp = Field(default=Ramp(steps=1000, limit=0.3), description="Contrast deviation D")
    contrast_low: float = Field(default=0.5, ge=0.0, le=1.0, description="theta1 lower bound is 1 - contrast_low * D")
    contrast_high: float = Field(default=1.0, ge=0.0, description="theta1 upper bound is 1 + contrast_high * D")
    saturation_ramp: Ramp = Field(default=Ramp(steps=1000, limit=0.3), description="Max desaturation 1 - theta3")
    noise_ramp: Ramp = Field(default=Ramp(steps=1000, limit=0.02 * 255), description="Max noise sigma in gray levels")
    blur: BlurConfig = Field(default_factory=BlurConfig)
    moire_probability: float = Field(default=0.75, ge=0.0, le=1.0)
    motion_blur_probability: float = Field(default=1.0, ge=0.0, le=1.0)
    moire_blur_sigma: float = Field(default=1.0, ge=0.0, description="Blur sigma at the threefold subpixel scale")
    moire_offset: float = Field(default=0.1, ge=0.0, le=0.2, description="Perspective jitter as a fraction of side")

    @field_validator("saturation_ramp")
    @classmethod
    def _saturation_floor(cls, v: Ramp) -> Ramp:
        if v.limit > 1.0:
            raise ValueError("saturation ramp limit must not exceed 1")
        return v

    @property
    def min_theta3(self) -> float:
        return 1.0 - self.saturation_ramp.limit

    @classmethod
    def zero_severity(cls, seed: int = 0) -> "ChannelConfig":
        """A channel whose every stage is the identity."""
        flat = Ramp(steps=1, limit=0.0)
        return cls(
            seed=seed,
            brightness_ramp=flat,
            contrast_ramp=flat,
            saturation_ramp=flat,
            noise_ramp=flat,
            blur=BlurConfig(defocus_ramp=flat),
            moire_probability=0.0,
            motion_blur_probability=0.0,
        )


class EmbedConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float = Field(default=1.0, gt=0.0, description="JND scale bounding the residual")
    per_bit_gain: float = Field(default=0.35, gt=0.0, description="Gray levels per pattern before clipping")
    channels: Tuple[str, ...] = Field(default=("G", "B"), description="Channels carrying the residual")
    frame_side: int = Field(default=512, ge=128)
    sub_side: int = Field(default=256, ge=64)
    template_amplitude: float = Field(default=2.0, ge=0.0, description="Anti-crop template std in gray levels")
    payload_bits: int = Field(default=127, ge=1)
    chip: int = Field(default=2, ge=1, description="Pattern chip size in pixels")
    sync_radius: int = Field(default=2, ge=0, description="Shift search radius at extraction")
    confidence_floor: float = Field(default=0.01, ge=0.0, description="Minimum candidate confidence")

    @field_validator("channels")
    @classmethod
    def _known_channels(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if not v or any(c not in ("R", "G", "B") for c in v) or len(set(v)) != len(v):
            raise ValueError("channels must be distinct names among R, G, B")
        return v

    @model_validator(mode="after")
    def _sub_side_divides(self) -> "EmbedConfig":
        if self.frame_side != 2 * self.sub_side:
            raise ValueError("frame_side must hold exactly 2x2 sub-images")
        if self.sub_side % self.chip != 0:
            raise ValueError("chip must divide sub_side")
        return self

    @property
    def channel_indices(self) -> Tuple[int, ...]:
        return tuple("RGB".index(c) for c in self.channels)


class LocateConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    median_window: int = Field(default=5, ge=3)
    threshold_block: int = Field(default=31, ge=3)
    threshold_offset: float = Field(default=-6.0, description="Adaptive threshold offset; negative marks texture")
    background_tolerance: float = Field(default=12.0, gt=0.0, description="Gray levels separating foreground from background")
    closing_radius: int = Field(default=5, ge=0)
    refine: bool = Field(default=True, description="Close and hole-fill the thresholded mask")
    canny_low: float = Field(default=50.0, gt=0.0)
    canny_high: float = Field(default=100.0, gt=0.0)
    rho_res: float = Field(default=1.0, gt=0.0)
    theta_res_deg: float = Field(default=1.0, gt=0.0)
    min_votes_fraction: float = Field(default=0.3, gt=0.0, le=1.0)
    angle_min_deg: float = Field(default=20.0, ge=0.0, le=90.0)
    line_band: float = Field(default=2.0, ge=0.0, description="Edge pixels within this distance refine a line")
    kmeans_iters: int = Field(default=100, ge=1)
    output_side: int = Field(default=512, ge=8)
    working_side: int = Field(default=400, ge=64, description="Longest side the Hough vote runs at; lines are refined at full resolution")
    pad: int = Field(default=16, ge=0)
    seed: int = Field(default=0, ge=0)

    @field_validator("median_window", "threshold_block")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("window sizes must be odd")
        return v

    @property
    def theta_res(self) -> float:
        return math.radians(self.theta_res_deg)

    @property
    def angle_min(self) -> float:
        return math.radians(self.angle_min_deg)


class AnticropConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    wiener_window: int = Field(default=3, ge=3)
    min_distance: int = Field(default=4, ge=1, description="Smallest mirror band d_j")
    highpass_window: int = Field(default=31, ge=1)
    peak_threshold: float = Field(default=0.15, description="tau_s on the high-passed profile")

    @field_validator("wiener_window", "highpass_window")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("window sizes must be odd")
        return v


class LoggingConfig(BaseModel):
    level: str = Field(default="INFO")
    json_output: Optional[bool] = Field(default=None, description="Force JSON (true) or console (false) rendering")


class ScreenmarkConfig(BaseModel):
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    embed: EmbedConfig = Field(default_factory=EmbedConfig)
    jnd: JndParams = Field(default_factory=JndParams)
    locate: LocateConfig = Field(default_factory=LocateConfig)
    anticrop: AnticropConfig = Field(default_factory=AnticropConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


def _validate(data: Mapping[str, Any]) -> ScreenmarkConfig:
    try:
        return ScreenmarkConfig.model_validate(dict(data))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> ScreenmarkConfig:
    """Load configuration from TOML.

    Without an explicit path, ``./config.toml`` is used when present and
    defaults otherwise.
    """
    if path is None:
        if not os.path.exists(DEFAULT_CONFIG_PATH):
            logger.warning("config.toml file not found, using default config")
            return ScreenmarkConfig()
        try:
            with open(DEFAULT_CONFIG_PATH, "rb") as f:
                return _validate(tomllib.load(f))
        except tomllib.TOMLDecodeError as e:
            logger.warning("error loading config.toml, using default config", error=str(e))
            return ScreenmarkConfig()

    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ImageIOError(f"{path}: config file not found") from e
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read config ({e})") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return _validate(data)


def apply_overrides(config: ScreenmarkConfig, overrides: Mapping[str, Any]) -> ScreenmarkConfig:
    """Return a copy with dotted keys (``"channel.seed"``) replaced; ``None`` values are skipped."""
    data: Dict[str, Any] = config.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown configuration key '{dotted}'")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown configuration key '{dotted}'")
        node[leaf] = value
    return _validate(data)


def dump_config(config: ScreenmarkConfig, path: Union[str, Path]) -> None:
    data = config.model_dump(mode="json", exclude_none=True)
    try:
        with open(path, "w") as f:
            toml.dump(data, f)
    except OSError as e:
        raise ImageIOError(f"{path}: cannot write config ({e})") from e


def worker_count(requested: Optional[int] = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{env}'") from e
        if value >= 1:
            return value
    if requested is not None and requested >= 1:
        return requested
    return 1
