"""
Anti-crop localization.

A doubly mirror-symmetric noise template rides in the red channel. After a
crop, the Wiener residual of the red channel still carries the template,
and its mirror axes reveal where the 2x2 grid of sub-images used to be.
"""

from typing import List, Literal, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage, signal

from screenmark.config import AnticropConfig
from screenmark.errors import (
    ChannelMismatch,
    EvenWindow,
    NoSymmetryFound,
    OddDimensions,
    OutOfRange,
    ShapeMismatch,
    TooNarrow,
    ZeroVariance,
)
from screenmark.imaging import RasterF, RasterU8, to_u8

MIN_PROFILE_WIDTH = 8

logger = structlog.get_logger("anticrop")


class SymmetricTemplate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    plane: RasterF
    amplitude: float


class SymmetryProfile(BaseModel):
    """S(j) for candidate axes between index j - 1 and j."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scores: RasterF
    axis: Literal["column", "row"]


class SubImage(BaseModel):
    x: int
    y: int
    w: int
    h: int
    quadrant: Literal["TL", "TR", "BL", "BR"]


class CropBounds(BaseModel):
    rects: List[SubImage] = Field(default_factory=list)
    column_axes: List[int] = Field(default_factory=list)
    row_axes: List[int] = Field(default_factory=list)


# ----
# Template

def make_symmetric_template(rng: np.random.Generator, width: int, height: int, amplitude: float) -> SymmetricTemplate:
    if width % 2 or height % 2:
        raise OddDimensions(f"template dimensions must be even, got {width}x{height}")
    if amplitude < 0:
        raise OutOfRange(f"template amplitude must be nonnegative, got {amplitude}")
    quarter = rng.normal(0.0, amplitude, size=(height // 2, width // 2))
    top = np.hstack([quarter, quarter[:, ::-1]])
    plane = np.vstack([top, top[::-1, :]])
    plane = plane - plane.mean()
    return SymmetricTemplate(plane=plane, amplitude=amplitude)


def embed_template(red: RasterU8, tmpl: SymmetricTemplate) -> RasterU8:
    if red.ndim != 2:
        raise ChannelMismatch("template embedding expects a single channel")
    if red.shape != tmpl.plane.shape:
        raise ShapeMismatch(f"channel {red.shape} and template {tmpl.plane.shape} differ")
    return to_u8(red.astype(np.float64) + tmpl.plane)


# ----
# Residual and symmetry

def wiener_residual(red: RasterU8, window: int = 3) -> RasterF:
    """Input minus its adaptive Wiener estimate, with mirrored borders.

    The estimate is ``scipy.signal.wiener`` on the input padded by half a
    window; noise power is the mean local variance.
    """
    half = window // 2
    x = np.asarray(red, dtype=np.float64)
    padded = np.pad(x, half, mode="symmetric")
    with np.errstate(divide="ignore", invalid="ignore"):
        estimate = signal.wiener(padded, mysize=window)
    # Zero noise power over flat windows gives 0/0.
    estimate = np.where(np.isfinite(estimate), estimate, padded)
    if half:
        estimate = estimate[half:-half, half:-half]
    return x - estimate


def standardize(segment: np.ndarray) -> np.ndarray:
    values = np.asarray(segment, dtype=np.float64)
    if values.size < 2:
        raise ZeroVariance("need at least two samples")
    std = float(values.std())
    if std < 1e-12:
        raise ZeroVariance("segment has zero variance")
    return (values - values.mean()) / std


def _band_correlation(left: np.ndarray, right_mirrored: np.ndarray) -> float:
    try:
        a = standardize(left)
        b = standardize(right_mirrored)
    except ZeroVariance:
        return 0.0
    return float(np.clip(np.mean(a * b), -1.0, 1.0))


def column_symmetry(residual: RasterF, min_distance: int = 4) -> SymmetryProfile:
    residual = np.asarray(residual, dtype=np.float64)
    width = residual.shape[1]
    if width < MIN_PROFILE_WIDTH:
        raise TooNarrow(f"need at least {MIN_PROFILE_WIDTH} columns, got {width}")
    scores = np.zeros(width, dtype=np.float64)
    for j in range(width):
        d = min(j, width - j)
        if d < min_distance:
            continue
        left = residual[:, j - d : j]
        right = residual[:, j : j + d][:, ::-1]
        scores[j] = _band_correlation(left, right)
    return SymmetryProfile(scores=scores, axis="column")


def row_symmetry(residual: RasterF, min_distance: int = 4) -> SymmetryProfile:
    profile = column_symmetry(np.asarray(residual).T, min_distance)
    return SymmetryProfile(scores=profile.scores, axis="row")


def highpass_profile(profile: SymmetryProfile, window: int = 31) -> SymmetryProfile:
    if window % 2 == 0:
        raise EvenWindow(f"high-pass window must be odd, got {window}")
    baseline = ndimage.uniform_filter1d(profile.scores, size=window, mode="nearest")
    return SymmetryProfile(scores=profile.scores - baseline, axis=profile.axis)


def detect_axes(profile: SymmetryProfile, threshold: float, min_distance: int = 4) -> List[int]:
    peaks, _ = signal.find_peaks(profile.scores, height=threshold, distance=max(2 * min_distance, 1))
    return [int(p) for p in peaks]


# ----
# Recovery

def _intervals(axes: List[int], extent: int, side: int) -> List[tuple[int, bool]]:
    """(start, is_second_half) for every side-long interval anchored on an axis."""
    found: List[tuple[int, bool]] = []
    for a in axes:
        if a - side >= 0:
            found.append((a - side, False))
        if a + side <= extent:
            found.append((a, True))
    return found


def recover_subimages(
    cropped: RasterU8, sub_side: int = 256, cfg: Optional[AnticropConfig] = None
) -> CropBounds:
    cfg = cfg or AnticropConfig()
    if cropped.ndim != 3 or cropped.shape[2] != 3:
        raise ChannelMismatch("anti-crop recovery expects an RGB image")
    height, width = cropped.shape[:2]
    if height < sub_side or width < sub_side:
        raise NoSymmetryFound(f"crop {width}x{height} cannot hold a {sub_side}x{sub_side} sub-image")

    residual = wiener_residual(cropped[:, :, 0], cfg.wiener_window)
    columns = highpass_profile(column_symmetry(residual, cfg.min_distance), cfg.highpass_window)
    rows = highpass_profile(row_symmetry(residual, cfg.min_distance), cfg.highpass_window)
    column_axes = detect_axes(columns, cfg.peak_threshold, cfg.min_distance)
    row_axes = detect_axes(rows, cfg.peak_threshold, cfg.min_distance)
    logger.debug("symmetry axes", columns=column_axes, rows=row_axes)
    if not column_axes and not row_axes:
        raise NoSymmetryFound("no symmetry peak above threshold")

    rects: List[SubImage] = []
    for y, lower in _intervals(row_axes, height, sub_side):
        for x, right in _intervals(column_axes, width, sub_side):
            quadrant = ("B" if lower else "T") + ("R" if right else "L")
            rects.append(SubImage(x=x, y=y, w=sub_side, h=sub_side, quadrant=quadrant))  # type: ignore[arg-type]
    return CropBounds(rects=rects, column_axes=column_axes, row_axes=row_axes)
