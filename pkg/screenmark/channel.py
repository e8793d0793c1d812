"""
Screen-shooting channel simulation.

Stages run in a fixed order: colour gamut, saturation, blur (motion or
defocus), moire, sensor noise. Every stage parameter is drawn from
step-dependent ramps in ``ChannelConfig`` and recorded in a
``DistortionTrace`` that replays bit-exactly.
"""

import math
from typing import Annotated, List, Literal, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import ndimage

from screenmark.config import ChannelConfig
from screenmark.errors import (
    ChannelMismatch,
    EvenSize,
    NegativeSigma,
    NonPositiveContrast,
    NonPositiveSigma,
    OddDimensions,
    OutOfRange,
)
from screenmark.geometry import Homography, random_perspective, warp_float
from screenmark.imaging import RasterF, RasterU8, convolve2d, luma, to_u8

SUBPIXEL_SCALE = 3
# Each channel lights 2 of the 9 samples of a subpixel block.
SUBPIXEL_GAIN = 9.0 / 2.0

RB_KERNEL = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0
G_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0

logger = structlog.get_logger("channel")


# ----
# Trace records

class GamutStage(BaseModel):
    stage: Literal["gamut"] = "gamut"
    theta1: float
    theta2: float


class SaturationStage(BaseModel):
    stage: Literal["saturation"] = "saturation"
    theta3: float


class BlurStage(BaseModel):
    stage: Literal["blur"] = "blur"
    kind: Literal["defocus", "motion"]
    size: int
    sigma: float
    theta: float = 0.0


class MoireStage(BaseModel):
    stage: Literal["moire"] = "moire"
    homography: Homography
    blur_sigma: float


class NoiseStage(BaseModel):
    stage: Literal["noise"] = "noise"
    sigma: float
    noise_seed: int


Stage = Annotated[
    Union[GamutStage, SaturationStage, BlurStage, MoireStage, NoiseStage],
    Field(discriminator="stage"),
]


class DistortionTrace(BaseModel):
    seed: int
    step: int
    stages: List[Stage] = Field(default_factory=list)


# ----
# Photometric stages

def _require_rgb(img: RasterU8) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelMismatch(f"expected a 3-channel image, got shape {img.shape}")


def color_gamut(img: RasterU8, theta1: float, theta2: float) -> RasterU8:
    if theta1 <= 0:
        raise NonPositiveContrast(f"contrast factor must be positive, got {theta1}")
    return to_u8(theta1 * img.astype(np.float64) + theta2)


def sample_gamut_params(step: int, cfg: ChannelConfig, rng: np.random.Generator) -> Tuple[float, float]:
    """(theta1, theta2) at ``step``; both intervals collapse to the identity at step 0."""
    u_brightness, u_contrast = rng.random(2)
    m1 = cfg.brightness_ramp.at(step)
    theta2 = -m1 + 2.0 * m1 * float(u_brightness)
    deviation = cfg.contrast_ramp.at(step)
    low = 1.0 - cfg.contrast_low * deviation
    high = 1.0 + cfg.contrast_high * deviation
    theta1 = low + (high - low) * float(u_contrast)
    return theta1, theta2


def saturation(img: RasterU8, theta3: float) -> RasterU8:
    _require_rgb(img)
    if not 0.0 <= theta3 <= 1.0:
        raise OutOfRange(f"saturation level must lie in [0, 1], got {theta3}")
    gray = luma(img)[:, :, None]
    return to_u8(theta3 * img.astype(np.float64) + (1.0 - theta3) * gray)


def gaussian_noise(img: RasterU8, sigma: float, rng: np.random.Generator) -> RasterU8:
    if sigma < 0:
        raise NegativeSigma(f"noise sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return img.copy()
    return to_u8(img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape))


# ----
# Blur

def _check_kernel_args(n: int, sigma: float) -> None:
    if n < 1 or n % 2 == 0:
        raise EvenSize(f"kernel size must be odd, got {n}")
    if sigma <= 0:
        raise NonPositiveSigma(f"kernel sigma must be positive, got {sigma}")


def gaussian_blur_kernel(n: int, sigma: float) -> RasterF:
    _check_kernel_args(n, sigma)
    r = n // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    kernel = np.exp(-(x**2 + y**2) / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    return kernel / kernel.sum()


def motion_blur_kernel(n: int, sigma: float, theta: float) -> RasterF:
    """Gaussian evaluated at (x cos theta, y sin theta)."""
    _check_kernel_args(n, sigma)
    r = n // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    u = x * math.cos(theta)
    v = y * math.sin(theta)
    kernel = np.exp(-(u**2 + v**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def blur(img: RasterU8, kernel: RasterF) -> RasterU8:
    if img.ndim == 2:
        return to_u8(convolve2d(img, kernel))
    planes = [convolve2d(img[:, :, c], kernel) for c in range(img.shape[2])]
    return to_u8(np.stack(planes, axis=2))


def _blur_float(planes: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return planes
    n = 2 * int(math.ceil(3.0 * sigma)) + 1
    kernel = gaussian_blur_kernel(n, sigma)
    return np.stack([convolve2d(planes[:, :, c], kernel) for c in range(planes.shape[2])], axis=2)


def _pad_periodic(planes: np.ndarray, periods: int) -> np.ndarray:
    """Extend by whole subpixel periods, repeating the edge block on each side."""
    s = SUBPIXEL_SCALE
    planes = np.concatenate([np.tile(planes[:s], (periods, 1, 1)), planes, np.tile(planes[-s:], (periods, 1, 1))], axis=0)
    return np.concatenate(
        [np.tile(planes[:, :s], (1, periods, 1)), planes, np.tile(planes[:, -s:], (1, periods, 1))], axis=1
    )


def _blur_subpixels(planes: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur of a subpixel raster whose borders keep the stripe phase."""
    if sigma <= 0:
        return planes
    periods = int(math.ceil((int(math.ceil(3.0 * sigma)) + 1) / SUBPIXEL_SCALE))
    pad = periods * SUBPIXEL_SCALE
    return _blur_float(_pad_periodic(planes, periods), sigma)[pad:-pad, pad:-pad]


# ----
# Moire pipeline

def lcd_subpixel_resample(img: RasterU8) -> RasterU8:
    """Expand each pixel to a 3x3 block: R in column 0, G in column 1, B in column 2, row 2 dark."""
    _require_rgb(img)
    h, w = img.shape[:2]
    out = np.zeros((SUBPIXEL_SCALE * h, SUBPIXEL_SCALE * w, 3), dtype=np.uint8)
    for row in (0, 1):
        for c in range(3):
            out[row::SUBPIXEL_SCALE, c::SUBPIXEL_SCALE, c] = img[:, :, c]
    return out


def _require_even(shape: Tuple[int, ...]) -> None:
    if shape[0] % 2 or shape[1] % 2:
        raise OddDimensions(f"Bayer sampling needs even dimensions, got {shape[:2]}")


def _cfa_masks(h: int, w: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = np.zeros((h, w), dtype=bool)
    g = np.zeros((h, w), dtype=bool)
    b = np.zeros((h, w), dtype=bool)
    r[0::2, 0::2] = True
    g[0::2, 1::2] = True
    g[1::2, 0::2] = True
    b[1::2, 1::2] = True
    return r, g, b


def _mosaic(planes: np.ndarray) -> np.ndarray:
    _require_even(planes.shape)
    r, g, b = _cfa_masks(*planes.shape[:2])
    out = np.zeros(planes.shape[:2], dtype=planes.dtype)
    out[r] = planes[:, :, 0][r]
    out[g] = planes[:, :, 1][g]
    out[b] = planes[:, :, 2][b]
    return out


def _demosaic(mosaic: np.ndarray) -> np.ndarray:
    _require_even(mosaic.shape)
    values = mosaic.astype(np.float64)
    planes = []
    for mask, kernel in zip(_cfa_masks(*mosaic.shape), (RB_KERNEL, G_KERNEL, RB_KERNEL)):
        weights = mask.astype(np.float64)
        num = ndimage.convolve(values * weights, kernel, mode="constant", cval=0.0)
        den = ndimage.convolve(weights, kernel, mode="constant", cval=0.0)
        planes.append(num / den)
    return np.stack(planes, axis=2)


def bayer_mosaic(img: RasterU8) -> RasterU8:
    """RGGB sampling: (0,0)=R, (0,1)=G, (1,0)=G, (1,1)=B."""
    _require_rgb(img)
    return _mosaic(img)


def demosaic_bilinear(mosaic: RasterU8) -> RasterU8:
    if mosaic.ndim != 2:
        raise ChannelMismatch("demosaicing expects a single-plane mosaic")
    return to_u8(_demosaic(mosaic))


def render_moire(img: RasterU8, h_unit: Homography, blur_sigma: float) -> RasterU8:
    """Deterministic moire for a given unit-square perspective and blur.

    Odd dimensions are edge-padded to even for the Bayer stage and cropped back.
    """
    _require_rgb(img)
    orig_h, orig_w = img.shape[:2]
    if orig_h % 2 or orig_w % 2:
        img = np.pad(img, ((0, orig_h % 2), (0, orig_w % 2), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    big_w, big_h = SUBPIXEL_SCALE * w, SUBPIXEL_SCALE * h
    homography = h_unit.rescaled(big_w, big_h)
    inverse = homography.inverse()

    sub = lcd_subpixel_resample(img).astype(np.float64)
    warped, covered = warp_float(sub, homography, (big_w, big_h))
    blurred = _blur_subpixels(warped, blur_sigma)
    captured = _demosaic(_mosaic(blurred))
    restored, back_covered = warp_float(captured, inverse, (big_w, big_h))

    # Pixels that left the canvas during the forward warp cannot come back.
    returned, _ = warp_float(covered.astype(np.float64), inverse, (big_w, big_h))
    valid = back_covered & (returned >= 1.0 - 1e-9)
    margin = (int(math.ceil(3.0 * blur_sigma)) if blur_sigma > 0 else 0) + 2
    valid = ndimage.binary_erosion(valid, iterations=margin, border_value=1)

    down = restored.reshape(h, SUBPIXEL_SCALE, w, SUBPIXEL_SCALE, 3).mean(axis=(1, 3)) * SUBPIXEL_GAIN
    block_valid = valid.reshape(h, SUBPIXEL_SCALE, w, SUBPIXEL_SCALE).all(axis=(1, 3))
    out = np.where(block_valid[:, :, None], down, img.astype(np.float64))
    return to_u8(out[:orig_h, :orig_w])


def moire(img: RasterU8, rng: np.random.Generator, cfg: ChannelConfig) -> RasterU8:
    return render_moire(img, random_perspective(rng, cfg.moire_offset), cfg.moire_blur_sigma)


# ----
# Composition

def _odd_sizes(max_kernel: int) -> List[int]:
    return list(range(3, max_kernel + 1, 2))


def _sample_stages(cfg: ChannelConfig, rng: np.random.Generator) -> List[Stage]:
    step = cfg.step
    stages: List[Stage] = []

    theta1, theta2 = sample_gamut_params(step, cfg, rng)
    if theta1 != 1.0 or theta2 != 0.0:
        stages.append(GamutStage(theta1=theta1, theta2=theta2))

    theta3 = 1.0 - cfg.saturation_ramp.at(step) * float(rng.random())
    if theta3 != 1.0:
        stages.append(SaturationStage(theta3=theta3))

    u_kind, u_size, u_sigma, u_theta = (float(u) for u in rng.random(4))
    sizes = _odd_sizes(cfg.blur.max_kernel)
    size = sizes[min(int(u_size * len(sizes)), len(sizes) - 1)]
    if u_kind < cfg.motion_blur_probability:
        lo, hi = cfg.blur.motion_sigma
        stages.append(BlurStage(kind="motion", size=size, sigma=lo + (hi - lo) * u_sigma, theta=math.pi * u_theta))
    else:
        sigma = cfg.blur.defocus_ramp.at(step) * u_sigma
        if sigma > 0:
            stages.append(BlurStage(kind="defocus", size=size, sigma=sigma))

    u_moire = float(rng.random())
    moire_rng = np.random.default_rng(int(rng.integers(2**63)))
    if step >= cfg.total_steps / 2 and u_moire < cfg.moire_probability:
        h_unit = random_perspective(moire_rng, cfg.moire_offset)
        stages.append(MoireStage(homography=h_unit, blur_sigma=cfg.moire_blur_sigma))

    sigma = cfg.noise_ramp.at(step) * float(rng.random())
    noise_seed = int(rng.integers(2**63))
    if sigma > 0:
        stages.append(NoiseStage(sigma=sigma, noise_seed=noise_seed))
    return stages


def apply_stage(img: RasterU8, stage: Stage) -> RasterU8:
    if isinstance(stage, GamutStage):
        return color_gamut(img, stage.theta1, stage.theta2)
    if isinstance(stage, SaturationStage):
        return saturation(img, stage.theta3)
    if isinstance(stage, BlurStage):
        if stage.kind == "motion":
            kernel = motion_blur_kernel(stage.size, stage.sigma, stage.theta)
        else:
            kernel = gaussian_blur_kernel(stage.size, stage.sigma)
        return blur(img, kernel)
    if isinstance(stage, MoireStage):
        return render_moire(img, stage.homography, stage.blur_sigma)
    return gaussian_noise(img, stage.sigma, np.random.default_rng(stage.noise_seed))


def replay_trace(img: RasterU8, trace: DistortionTrace) -> RasterU8:
    out = img.copy()
    for stage in trace.stages:
        out = apply_stage(out, stage)
    return out


def apply_channel(img: RasterU8, cfg: ChannelConfig, rng: np.random.Generator) -> Tuple[RasterU8, DistortionTrace]:
    _require_rgb(img)
    trace = DistortionTrace(seed=cfg.seed, step=cfg.step, stages=_sample_stages(cfg, rng))
    out = replay_trace(img, trace)
    logger.debug("channel applied", step=cfg.step, stages=[s.stage for s in trace.stages])
    return out, trace
