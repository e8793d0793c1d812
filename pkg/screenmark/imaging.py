"""
Raster primitives shared by every screenmark module.

RasterU8 is a ``uint8`` array of shape (H, W) or (H, W, 3); RasterF is a
``float64`` array of shape (H, W). Float math is rounded back to 8 bits with
round-half-away-from-zero, once, at raster boundaries.
"""

import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import numpy.typing as npt
import structlog
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from skimage.metrics import structural_similarity

from screenmark.errors import (
    ChannelMismatch,
    EvenKernel,
    EvenWindow,
    ImageIOError,
    ImageTooSmall,
    LengthMismatch,
    ShapeMismatch,
)

RasterU8 = npt.NDArray[np.uint8]
RasterF = npt.NDArray[np.float64]
BitString = npt.NDArray[np.uint8]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

logger = structlog.get_logger("imaging")


class QualityReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    psnr: float = Field(..., description="Peak signal-to-noise ratio in dB, may be +inf")
    ssim: float = Field(..., le=1.0, description="Structural similarity")
    ber: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="Bit error rate")


# ----
# Conversions

def to_u8(plane: npt.ArrayLike) -> RasterU8:
    """Round half away from zero and clamp to [0, 255]."""
    values = np.asarray(plane, dtype=np.float64)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def luma(img: RasterU8) -> RasterF:
    """Unrounded 0.299R + 0.587G + 0.114B plane."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelMismatch(f"expected a 3-channel image, got shape {img.shape}")
    rgb = img.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]


def to_grayscale(img: RasterU8) -> RasterU8:
    return to_u8(luma(img))


def gray_of(img: RasterU8) -> RasterU8:
    """Grayscale view of either a single-channel or an RGB raster."""
    if img.ndim == 2:
        return img
    return to_grayscale(img)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")


# ----
# Metrics

def psnr(a: RasterU8, b: RasterU8) -> float:
    _check_same_shape(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def ssim(a: RasterU8, b: RasterU8) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Both inputs are 8-bit; RGB pairs are averaged over channels.
    """
    _check_same_shape(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    value = structural_similarity(
        a,
        b,
        data_range=255,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
        channel_axis=2 if a.ndim == 3 else None,
    )
    return float(value)


def ber(sent: BitString, recv: BitString) -> float:
    sent = np.asarray(sent)
    recv = np.asarray(recv)
    if sent.shape != recv.shape:
        raise LengthMismatch(f"bit strings differ in length: {sent.size} vs {recv.size}")
    if sent.size == 0:
        return 0.0
    return float(np.count_nonzero(sent != recv)) / sent.size


def quality_report(host: RasterU8, marked: RasterU8, ber_value: Optional[float] = None) -> QualityReport:
    return QualityReport(psnr=psnr(host, marked), ssim=ssim(gray_of(host), gray_of(marked)), ber=ber_value)


# ----
# Filtering

def convolve2d(img: npt.ArrayLike, kernel: npt.ArrayLike) -> RasterF:
    """Same-size convolution with replicated borders."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise EvenKernel(f"kernel dimensions must be odd, got {kernel.shape}")
    return ndimage.convolve(np.asarray(img, dtype=np.float64), kernel, mode="nearest")


def median_filter(img: RasterU8, window: int) -> RasterU8:
    if window < 3 or window % 2 == 0:
        raise EvenWindow(f"median window must be odd and >= 3, got {window}")
    if img.ndim != 2:
        raise ChannelMismatch("median filter expects a single-channel image")
    return ndimage.median_filter(img, size=window, mode="nearest")


def box_blur(plane: npt.ArrayLike, size: int = 3) -> RasterF:
    return ndimage.uniform_filter(np.asarray(plane, dtype=np.float64), size=size, mode="nearest")


# ----
# PNG I/O

def read_png(path: Union[str, Path]) -> RasterU8:
    """Load an 8-bit PNG as (H, W) or (H, W, 3); alpha is dropped with a warning."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("RGBA", "LA", "PA") or (mode == "P" and "transparency" in im.info):
                logger.warning("alpha channel stripped", path=str(path), mode=mode)
            if mode in ("L", "LA"):
                converted = im.convert("L")
            elif mode in ("I;16", "I;16B", "I", "F"):
                raise ImageIOError(f"{path}: only 8-bit images are supported (mode {mode})")
            else:
                converted = im.convert("RGB")
            return np.asarray(converted, dtype=np.uint8).copy()
    except FileNotFoundError as e:
        raise ImageIOError(f"{path}: file not found") from e
    except (UnidentifiedImageError, OSError) as e:
        raise ImageIOError(f"{path}: cannot read image ({e})") from e


def write_png(path: Union[str, Path], img: RasterU8) -> None:
    path = Path(path)
    if img.dtype != np.uint8:
        img = to_u8(img)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(path, format="PNG")
    except OSError as e:
        raise ImageIOError(f"{path}: cannot write image ({e})") from e


def resize(img: RasterU8, width: int, height: int) -> RasterU8:
    """Bilinear resize through Pillow."""
    return np.asarray(Image.fromarray(img).resize((width, height), Image.Resampling.BILINEAR), dtype=np.uint8)
