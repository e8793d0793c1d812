"""
Pixel-domain just-noticeable-distortion (JND) model.

The map combines background luminance adaptation with spatial masking by the
local luminance gradient (Chou-Li form). It is computed on the grayscale of
the host and bounds the per-pixel watermark residual.
"""

import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator

from screenmark.errors import ChannelMismatch, ImageIOError, OutOfRange, ShapeMismatch
from screenmark.imaging import RasterF, RasterU8, convolve2d

JNDF_MAGIC = b"JNDF"

BACKGROUND_KERNEL = [
    [1, 1, 1, 1, 1],
    [1, 2, 2, 2, 1],
    [1, 2, 0, 2, 1],
    [1, 2, 2, 2, 1],
    [1, 1, 1, 1, 1],
]

GRADIENT_KERNELS = [
    [
        [0, 0, 0, 0, 0],
        [1, 3, 8, 3, 1],
        [0, 0, 0, 0, 0],
        [-1, -3, -8, -3, -1],
        [0, 0, 0, 0, 0],
    ],
    [
        [0, 0, 1, 0, 0],
        [0, 8, 3, 0, 0],
        [1, 3, 0, -3, -1],
        [0, 0, -3, -8, 0],
        [0, 0, -1, 0, 0],
    ],
    [
        [0, 0, 1, 0, 0],
        [0, 0, 3, 8, 0],
        [-1, -3, 0, 3, 1],
        [0, -8, -3, 0, 0],
        [0, 0, -1, 0, 0],
    ],
    [
        [0, 1, 0, -1, 0],
        [0, 3, 0, -3, 0],
        [0, 8, 0, -8, 0],
        [0, 3, 0, -3, 0],
        [0, 1, 0, -1, 0],
    ],
]

logger = structlog.get_logger("jnd")


class JndParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(default=1.0, ge=0.0, description="Masking weight")
    lambda2: float = Field(default=0.0, ge=0.0, description="Gray-level offset added to the masking term")
    bg_kernel: List[List[float]] = Field(default_factory=lambda: [row[:] for row in BACKGROUND_KERNEL])
    grad_kernels: List[List[List[float]]] = Field(default_factory=lambda: [[row[:] for row in k] for k in GRADIENT_KERNELS])
    grad_scale: float = Field(default=16.0, gt=0.0, description="Divisor applied to every gradient kernel")

    @field_validator("bg_kernel")
    @classmethod
    def _check_bg(cls, v: List[List[float]]) -> List[List[float]]:
        arr = np.asarray(v, dtype=np.float64)
        if arr.shape != (5, 5):
            raise ValueError("background kernel must be 5x5")
        if np.any(arr < 0) or arr.sum() <= 0:
            raise ValueError("background kernel weights must be nonnegative with a positive sum")
        return v

    @field_validator("grad_kernels")
    @classmethod
    def _check_grad(cls, v: List[List[List[float]]]) -> List[List[List[float]]]:
        arr = np.asarray(v, dtype=np.float64)
        if arr.shape != (4, 5, 5):
            raise ValueError("expected four 5x5 gradient kernels")
        if not np.allclose(arr.sum(axis=(1, 2)), 0.0):
            raise ValueError("gradient kernels must sum to zero")
        return v

    def background(self) -> npt.NDArray[np.float64]:
        arr = np.asarray(self.bg_kernel, dtype=np.float64)
        return arr / arr.sum()

    def gradients(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.grad_kernels, dtype=np.float64) / self.grad_scale


class JndMap(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    plane: RasterF

    @property
    def width(self) -> int:
        return int(self.plane.shape[1])

    @property
    def height(self) -> int:
        return int(self.plane.shape[0])


def _require_gray(gray: RasterU8) -> None:
    if gray.ndim != 2:
        raise ChannelMismatch(f"expected a single-channel image, got shape {gray.shape}")


def background_luminance(gray: RasterU8, params: JndParams) -> RasterF:
    _require_gray(gray)
    return convolve2d(gray, params.background())


def max_gradient(gray: RasterU8, params: JndParams) -> RasterF:
    _require_gray(gray)
    responses = [np.abs(convolve2d(gray, k)) for k in params.gradients()]
    return np.max(np.stack(responses), axis=0)


def luminance_adaptation(bg: Union[float, npt.ArrayLike]) -> Union[float, RasterF]:
    """Visibility threshold from background luminance; 20 at black, 3 at 127, 6 at 255."""
    x = np.asarray(bg, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 255) or not np.all(np.isfinite(x)):
        raise OutOfRange("background luminance must lie in [0, 255]")
    dark = 17.0 * (1.0 - x / 127.0) + 3.0
    bright = (3.0 / 128.0) * (x - 127.0) + 3.0
    out = np.where(x <= 127.0, dark, bright)
    if out.ndim == 0:
        return float(out)
    return out


def spatial_masking(bg: RasterF, mg: RasterF, params: JndParams) -> RasterF:
    bg = np.asarray(bg, dtype=np.float64)
    mg = np.asarray(mg, dtype=np.float64)
    if bg.shape != mg.shape:
        raise ShapeMismatch(f"background {bg.shape} and gradient {mg.shape} differ")
    alpha = 0.0001 * bg + 0.115
    beta = 0.5 - 0.01 * bg
    return mg * alpha + np.maximum(beta, 0.0)


def jnd_map(gray: RasterU8, params: JndParams = JndParams()) -> JndMap:
    bg = background_luminance(gray, params)
    mg = max_gradient(gray, params)
    f1 = spatial_masking(bg, mg, params)
    f2 = luminance_adaptation(np.clip(bg, 0.0, 255.0))
    plane = params.lambda1 * (f1 + params.lambda2) + f2
    logger.debug("jnd map", mean=float(plane.mean()), min=float(plane.min()), max=float(plane.max()))
    return JndMap(plane=plane)


def flat_jnd(jnd: JndMap) -> JndMap:
    """Same total budget without content adaptation: every pixel gets the map mean."""
    return JndMap(plane=np.full(jnd.plane.shape, float(jnd.plane.mean())))



# ----
# Export

def normalized_preview(jnd: JndMap) -> RasterU8:
    """Scale a map to 0..255 for viewing."""
    plane = jnd.plane
    lo, hi = float(plane.min()), float(plane.max())
    if hi - lo < 1e-12:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = (plane - lo) * (255.0 / (hi - lo))
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def write_jnd_sidecar(path: Union[str, Path], jnd: JndMap) -> None:
    """Raw little-endian float32 plane behind a 16-byte header (magic, width, height, reserved)."""
    header = JNDF_MAGIC + struct.pack("<III", jnd.width, jnd.height, 0)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(jnd.plane.astype("<f4").tobytes())
    except OSError as e:
        raise ImageIOError(f"{path}: cannot write JND sidecar ({e})") from e


def read_jnd_sidecar(path: Union[str, Path]) -> JndMap:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read JND sidecar ({e})") from e
    if len(raw) < 16 or raw[:4] != JNDF_MAGIC:
        raise ImageIOError(f"{path}: not a JND sidecar")
    width, height, _ = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw[16:], dtype="<f4")
    if body.size != width * height:
        raise ImageIOError(f"{path}: truncated JND sidecar")
    return JndMap(plane=body.reshape(height, width).astype(np.float64))


def jnd_bounds(jnd: JndMap, eta: float) -> Tuple[RasterF, RasterF]:
    limit = eta * jnd.plane
    return -limit, limit
