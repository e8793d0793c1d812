"""
Localization of the displayed image inside a camera capture.

Pipeline: grayscale and median filter, foreground mask against the border
background, largest component, morphological refinement, Canny edges of the
mask, Hough lines, pairwise intersections, k-means++ into four corners,
clockwise ordering and a perspective warp onto the output frame.
"""

import math
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from skimage import draw, feature, filters, measure, morphology

from screenmark.config import LocateConfig
from screenmark.errors import (
    BadThresholds,
    DegenerateQuad,
    EmptyMask,
    EvenBlock,
    ImageTooSmall,
    LocalizationFailed,
    NonConvex,
    SingularSystem,
    SingularTransform,
    TooFewPoints,
)
from screenmark.geometry import Quad, homography_from_quads, warp_perspective
from screenmark.imaging import RasterU8, gray_of, median_filter, resize

Mask = npt.NDArray[np.bool_]

MIN_CAPTURE_SIDE = 64
CANNY_SIGMA = 1.4
NMS_CELLS = 3
KMEANS_TOLERANCE = 0.5

logger = structlog.get_logger("locate")


class LineParams(BaseModel):
    """x*cos(theta) + y*sin(theta) = rho with theta in [0, pi)."""

    model_config = ConfigDict(frozen=True)

    rho: float
    theta: float = Field(ge=0.0, lt=math.pi)
    votes: int = 0


class LocateResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    quad: Quad
    rectified: RasterU8
    recall_estimate: Optional[float] = None


# ----
# Mask

def adaptive_threshold(gray: RasterU8, block: int, offset: float) -> Mask:
    if block < 3 or block % 2 == 0:
        raise EvenBlock(f"block must be odd and at least 3, got {block}")
    values = np.asarray(gray, dtype=np.float64)
    local = filters.threshold_local(values, block, method="mean", offset=offset, mode="reflect")
    return values > local


def largest_component(mask: Mask) -> Mask:
    """Largest 8-connected component; ties go to the component seen first in row-major order."""
    labels, count = measure.label(np.asarray(mask, dtype=bool), connectivity=2, return_num=True)
    if count == 0:
        raise EmptyMask("mask has no foreground pixel")
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=count + 1)
    first = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size))
    best = min(range(1, count + 1), key=lambda lab: (-areas[lab], first[lab]))
    return labels == best


def refine_mask(mask: Mask, closing_radius: int = 5) -> Mask:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("cannot refine an empty mask")
    if closing_radius > 0:
        r = closing_radius
        padded = np.pad(mask, r, mode="edge")
        closed = ndimage.binary_closing(padded, structure=morphology.disk(r))
        mask = closed[r:-r, r:-r]
    return ndimage.binary_fill_holes(mask).astype(bool)


def _border_ring(gray: RasterU8) -> npt.NDArray[np.float64]:
    g = np.asarray(gray, dtype=np.float64)
    return np.concatenate([g[0, :], g[-1, :], g[1:-1, 0], g[1:-1, -1]])


def foreground_mask(gray: RasterU8, cfg: LocateConfig) -> Mask:
    """Pixels that differ from the border background; a textured border means the capture is all foreground."""
    ring = _border_ring(gray)
    if float(ring.std()) > cfg.background_tolerance:
        logger.debug("no uniform background, treating capture as full frame", ring_std=float(ring.std()))
        return np.ones(gray.shape, dtype=bool)
    background = float(np.median(ring))
    contrast = np.abs(gray.astype(np.float64) - background)
    contrast_u8 = np.clip(np.rint(contrast), 0, 255).astype(np.uint8)
    textured = adaptive_threshold(contrast_u8, cfg.threshold_block, cfg.threshold_offset)
    return textured | (contrast > cfg.background_tolerance)


# ----
# Edges and lines

def canny(gray: npt.ArrayLike, low: float, high: float) -> Mask:
    if not 0 < low < high:
        raise BadThresholds(f"need 0 < low < high, got low={low} high={high}")
    image = np.asarray(gray, dtype=np.float64)
    return feature.canny(image, sigma=CANNY_SIGMA, low_threshold=low, high_threshold=high)


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def _near(a: LineParams, b: LineParams, rho_tol: float, theta_tol: float) -> bool:
    if abs(a.theta - b.theta) <= theta_tol and abs(a.rho - b.rho) <= rho_tol:
        return True
    # (rho, theta) and (-rho, theta - pi) describe the same line
    return math.pi - abs(a.theta - b.theta) <= theta_tol and abs(a.rho + b.rho) <= rho_tol


def hough_lines(edges: Mask, rho_res: float, theta_res: float, min_votes: float) -> List[LineParams]:
    ys, xs = np.nonzero(edges)
    if xs.size == 0:
        return []
    thetas = np.arange(0.0, math.pi, theta_res)
    height, width = np.asarray(edges).shape
    offset = int(math.ceil(math.hypot(height, width) / rho_res))
    n_rho = 2 * offset + 1

    rhos = np.outer(xs, np.cos(thetas)) + np.outer(ys, np.sin(thetas))
    rho_idx = np.rint(rhos / rho_res).astype(np.int64) + offset
    theta_idx = np.broadcast_to(np.arange(thetas.size), rho_idx.shape)
    acc = np.bincount((rho_idx * thetas.size + theta_idx).ravel(), minlength=n_rho * thetas.size)
    acc = acc.reshape(n_rho, thetas.size)

    peaks = (acc == ndimage.maximum_filter(acc, size=3, mode="constant")) & (acc >= min_votes)
    r_i, t_i = np.nonzero(peaks)
    order = np.lexsort((t_i, r_i, -acc[r_i, t_i]))

    kept: List[LineParams] = []
    for k in order:
        line = LineParams(rho=(r_i[k] - offset) * rho_res, theta=float(thetas[t_i[k]]), votes=int(acc[r_i[k], t_i[k]]))
        if any(_near(line, other, NMS_CELLS * rho_res, NMS_CELLS * theta_res) for other in kept):
            continue
        kept.append(line)
    return kept


def refine_line(line: LineParams, edges: Mask, band: float) -> LineParams:
    """Total least squares fit to the edge pixels within ``band`` of the line."""
    ys, xs = np.nonzero(edges)
    dist = np.abs(xs * math.cos(line.theta) + ys * math.sin(line.theta) - line.rho)
    near = dist <= band
    if near.sum() < 2:
        return line
    pts = np.column_stack([xs[near], ys[near]]).astype(np.float64)
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    normal = vt[-1]
    theta = math.atan2(normal[1], normal[0])
    if theta < 0:
        theta += math.pi
    if theta >= math.pi:
        theta -= math.pi
    rho = centroid[0] * math.cos(theta) + centroid[1] * math.sin(theta)
    return LineParams(rho=float(rho), theta=float(theta), votes=line.votes)


def line_intersections(
    lines: List[LineParams], angle_min: float, bounds: Optional[Tuple[int, int]] = None
) -> npt.NDArray[np.float64]:
    """Pairwise intersections as an (N, 2) array of (x, y); bounds = (width, height) keeps points within 1.5x the image."""
    points: List[Tuple[float, float]] = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            a, b = lines[i], lines[j]
            if _angle_gap(a.theta, b.theta) < angle_min or _angle_gap(a.theta, b.theta) == 0.0:
                continue
            system = np.array([[math.cos(a.theta), math.sin(a.theta)], [math.cos(b.theta), math.sin(b.theta)]])
            x, y = np.linalg.solve(system, np.array([a.rho, b.rho]))
            if bounds is not None:
                w, h = bounds
                if not (-0.25 * w <= x <= 1.25 * w and -0.25 * h <= y <= 1.25 * h):
                    continue
            points.append((float(x), float(y)))
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


# ----
# Corners

def _sq_dist(points: npt.NDArray[np.float64], centers: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp(
    points: npt.ArrayLike,
    k: int,
    rng: np.random.Generator,
    iters: int = 100,
    objective_trace: Optional[List[float]] = None,
) -> npt.NDArray[np.float64]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < k:
        raise TooFewPoints(f"need at least {k} points, got {pts.shape[0]}")

    centers = [pts[rng.integers(pts.shape[0])]]
    while len(centers) < k:
        d2 = _sq_dist(pts, np.asarray(centers)).min(axis=1)
        total = float(d2.sum())
        idx = rng.integers(pts.shape[0]) if total == 0.0 else rng.choice(pts.shape[0], p=d2 / total)
        centers.append(pts[idx])
    c = np.asarray(centers, dtype=np.float64)

    for _ in range(iters):
        d2 = _sq_dist(pts, c)
        assign = d2.argmin(axis=1)
        if objective_trace is not None:
            objective_trace.append(float(d2[np.arange(pts.shape[0]), assign].sum()))
        updated = c.copy()
        for j in range(k):
            members = pts[assign == j]
            if members.size:
                updated[j] = members.mean(axis=0)
        moved = float(np.sqrt(((updated - c) ** 2).sum(axis=1)).max())
        c = updated
        if moved < KMEANS_TOLERANCE:
            break
    return c


def order_clockwise(centers: npt.ArrayLike) -> Quad:
    pts = np.asarray(centers, dtype=np.float64).reshape(4, 2)
    centroid = pts.mean(axis=0)
    # y points down, so increasing atan2 angle runs clockwise on screen
    angles = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    ordered = pts[np.argsort(angles, kind="stable")]
    start = int(np.argmin(ordered.sum(axis=1)))
    quad = Quad.from_array(np.roll(ordered, -start, axis=0))
    try:
        quad.check_convex()
    except DegenerateQuad as e:
        raise NonConvex(str(e)) from e
    return quad


def locate_recall(detected: Quad, truth: Quad, shape: Tuple[int, int]) -> float:
    """|detected & truth| / |truth| over the pixel grid of ``shape`` = (height, width)."""
    det = draw.polygon2mask(shape, detected.array()[:, ::-1])
    true = draw.polygon2mask(shape, truth.array()[:, ::-1])
    area = int(true.sum())
    if area == 0:
        raise EmptyMask("true quad covers no pixel")
    return float((det & true).sum()) / area


# ----
# Pipeline

def _mask_edges(mask: Mask, cfg: LocateConfig) -> Mask:
    padded = np.pad(mask.astype(np.float64) * 255.0, cfg.pad, mode="constant")
    return canny(padded, cfg.canny_low, cfg.canny_high)


def _upscale_line(line: LineParams, scale: float, pad: int) -> LineParams:
    """Map a line from the padded working raster to the padded full-resolution raster."""
    c, s = math.cos(line.theta), math.sin(line.theta)
    rho = line.rho - pad * (c + s)
    rho = (rho - (0.5 * scale - 0.5) * (c + s)) / scale
    return LineParams(rho=rho + pad * (c + s), theta=line.theta, votes=line.votes)


def detect_quad(captured: RasterU8, cfg: LocateConfig = LocateConfig()) -> Quad:
    height, width = captured.shape[:2]
    if height < MIN_CAPTURE_SIDE or width < MIN_CAPTURE_SIDE:
        raise ImageTooSmall(f"capture must be at least {MIN_CAPTURE_SIDE}x{MIN_CAPTURE_SIDE}, got {width}x{height}")
    gray = median_filter(gray_of(captured), cfg.median_window)

    try:
        mask = largest_component(foreground_mask(gray, cfg))
    except EmptyMask as e:
        raise LocalizationFailed("threshold", e) from e
    if cfg.refine:
        try:
            mask = refine_mask(mask, cfg.closing_radius)
        except EmptyMask as e:
            raise LocalizationFailed("refine", e) from e

    pad = cfg.pad
    edges = _mask_edges(mask, cfg)
    if not edges.any():
        raise LocalizationFailed("edges")

    # Hough runs on the mask reduced to working_side; lines are refit on full-resolution edges.
    scale = min(1.0, cfg.working_side / max(height, width))
    if scale < 1.0:
        small = resize(mask.astype(np.uint8) * 255, round(width * scale), round(height * scale)) >= 128
        coarse_edges = _mask_edges(small, cfg)
        min_votes = cfg.min_votes_fraction * min(small.shape)
    else:
        coarse_edges = edges
        min_votes = cfg.min_votes_fraction * min(height, width)
    lines = hough_lines(coarse_edges, cfg.rho_res, cfg.theta_res, min_votes)
    if len(lines) < 4:
        raise LocalizationFailed("lines", ValueError(f"found {len(lines)} lines"))
    if scale < 1.0:
        lines = [refine_line(_upscale_line(line, scale, pad), edges, cfg.line_band / scale) for line in lines]
    lines = [refine_line(line, edges, cfg.line_band) for line in lines]
    logger.debug(
        "hough lines", count=len(lines), scale=round(scale, 3), lines=[(round(l.rho, 1), round(l.theta, 3)) for l in lines]
    )

    points = line_intersections(lines, cfg.angle_min, (width + 2 * pad, height + 2 * pad)) - pad
    try:
        centers = kmeans_pp(points, 4, np.random.default_rng(cfg.seed), cfg.kmeans_iters)
    except TooFewPoints as e:
        raise LocalizationFailed("intersections", e) from e
    if len({(round(x, 3), round(y, 3)) for x, y in centers}) < 4:
        raise LocalizationFailed("clustering", ValueError("corner clusters collapsed"))

    try:
        return order_clockwise(centers)
    except NonConvex as e:
        raise LocalizationFailed("corners", e) from e


def locate_and_rectify(
    captured: RasterU8, cfg: LocateConfig = LocateConfig(), truth: Optional[Quad] = None
) -> LocateResult:
    quad = detect_quad(captured, cfg)
    side = cfg.output_side
    try:
        h = homography_from_quads(quad, Quad.frame(side, side))
    except (DegenerateQuad, NonConvex, SingularSystem, SingularTransform) as e:
        raise LocalizationFailed("corners", e) from e
    rectified = warp_perspective(captured, h, (side, side))
    recall = locate_recall(quad, truth, captured.shape[:2]) if truth is not None else None
    logger.info("located", corners=[(round(x, 1), round(y, 1)) for x, y in quad.corners], recall=recall)
    return LocateResult(quad=quad, rectified=rectified, recall_estimate=recall)
