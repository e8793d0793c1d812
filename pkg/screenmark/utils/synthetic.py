"""
Deterministic test imagery: textured hosts, single-edge crops and captures
pasted onto a uniform background.
"""

import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog
from scipy import ndimage
from skimage import draw

from screenmark.errors import ImageIOError, OutOfRange
from screenmark.geometry import Quad, homography_from_quads, warp_float
from screenmark.imaging import RasterU8, read_png, resize, to_u8

Edge = Literal["left", "right", "top", "bottom"]
EDGES: Tuple[Edge, ...] = ("left", "right", "top", "bottom")

HOST_LOW = 70.0
HOST_HIGH = 220.0
BACKGROUND_MAX = 20
MAX_CROP_RATIO = 0.75
MAX_TILT_DEG = 60.0
TILT_FOCAL = 2.0

logger = structlog.get_logger("synthetic")


def synthetic_host(rng: np.random.Generator, side: int = 512) -> RasterU8:
    """Smooth multi-octave colour texture with a few flat shapes, every channel in [70, 220]."""
    planes = np.zeros((side, side, 3), dtype=np.float64)
    for sigma, weight in ((32.0, 1.0), (8.0, 0.5), (2.0, 0.25)):
        noise = ndimage.gaussian_filter(rng.standard_normal((side, side, 3)), sigma=(sigma, sigma, 0))
        noise /= max(float(noise.std()), 1e-12)
        planes += weight * noise
    ys, xs = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    direction = rng.uniform(-1.0, 1.0, size=(3, 2))
    for c in range(3):
        planes[:, :, c] += 2.0 * (direction[c, 0] * xs + direction[c, 1] * ys)

    for _ in range(6):
        r0, c0 = rng.integers(0, side, size=2)
        radius = int(rng.integers(side // 32, side // 8))
        rr, cc = draw.disk((r0, c0), radius, shape=(side, side))
        planes[rr, cc] = rng.uniform(-2.5, 2.5, size=3)

    low, high = planes.min(), planes.max()
    scaled = HOST_LOW + (planes - low) * (HOST_HIGH - HOST_LOW) / max(high - low, 1e-12)
    return to_u8(scaled)


def synthetic_corpus(n: int, seed: int = 0, side: int = 512) -> List[Tuple[str, RasterU8]]:
    rng = np.random.default_rng(seed)
    return [(f"synthetic-{i:03d}", synthetic_host(rng, side)) for i in range(n)]


def load_corpus(directory: Union[str, Path], limit: Optional[int] = None, side: int = 512) -> List[Tuple[str, RasterU8]]:
    """PNG files of ``directory`` in name order, converted to RGB and resized to side x side."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: corpus directory not found")
    paths = sorted(directory.glob("*.png"))
    if limit is not None:
        paths = paths[:limit]
    corpus: List[Tuple[str, RasterU8]] = []
    for path in paths:
        img = read_png(path)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        if img.shape[:2] != (side, side):
            img = resize(img, side, side)
        corpus.append((path.stem, img))
    logger.info("corpus loaded", directory=str(directory), images=len(corpus))
    return corpus


def crop_edge(img: RasterU8, gamma: float, edge: Edge) -> RasterU8:
    """Remove the fraction ``gamma`` of the image from one edge."""
    if not 0.0 <= gamma <= MAX_CROP_RATIO:
        raise OutOfRange(f"crop ratio must lie in [0, {MAX_CROP_RATIO}], got {gamma}")
    height, width = img.shape[:2]
    cut_w = int(round(gamma * width))
    cut_h = int(round(gamma * height))
    if edge == "left":
        return img[:, cut_w:].copy()
    if edge == "right":
        return img[:, : width - cut_w].copy()
    if edge == "top":
        return img[cut_h:].copy()
    if edge == "bottom":
        return img[: height - cut_h].copy()
    raise OutOfRange(f"unknown edge '{edge}'")


def tilted_frame(width: int, height: int, tilt_deg: float) -> npt.NDArray[np.float64]:
    """Frame corners seen by a pinhole camera after turning the screen about its vertical axis.

    The focal length is ``TILT_FOCAL`` times the longer side; the result is
    shifted so its bounding box starts at the origin.
    """
    if abs(tilt_deg) > MAX_TILT_DEG:
        raise OutOfRange(f"tilt must lie in [-{MAX_TILT_DEG}, {MAX_TILT_DEG}] degrees, got {tilt_deg}")
    corners = Quad.frame(width, height).array() - np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    phi = math.radians(tilt_deg)
    focal = TILT_FOCAL * max(width, height)
    depth = focal + corners[:, 0] * math.sin(phi)
    projected = np.column_stack([corners[:, 0] * math.cos(phi), corners[:, 1]]) * (focal / depth)[:, None]
    return projected - projected.min(axis=0)


def paste_on_background(
    host: RasterU8,
    rng: np.random.Generator,
    canvas: Tuple[int, int] = (800, 800),
    max_offset: float = 0.1,
    background: Optional[Tuple[int, int, int]] = None,
    tilt_deg: float = 0.0,
) -> Tuple[RasterU8, Quad]:
    """Warp ``host`` into a uniform canvas = (width, height); returns the capture and the true corner quad.

    Corners are jittered by up to ``max_offset`` of the host side around a
    random placement that keeps the quad inside the canvas. A nonzero
    ``tilt_deg`` views the host turned about its vertical axis first.
    """
    canvas_w, canvas_h = canvas
    height, width = host.shape[:2]
    frame = Quad.frame(width, height)
    if tilt_deg:
        base = tilted_frame(width, height, tilt_deg)
        span_w, span_h = (float(v) + 1.0 for v in base.max(axis=0))
    else:
        base = frame.array()
        span_w, span_h = float(width), float(height)
    jitter = max_offset * max(width, height)
    slack_x = canvas_w - span_w - 2 * jitter
    slack_y = canvas_h - span_h - 2 * jitter
    if slack_x < 0 or slack_y < 0:
        raise OutOfRange(f"canvas {canvas_w}x{canvas_h} too small for host {width}x{height} with offset {max_offset}")
    left = jitter + rng.uniform(0.0, slack_x)
    top = jitter + rng.uniform(0.0, slack_y)

    corners = base + np.array([left, top]) + rng.uniform(-jitter, jitter, size=(4, 2))
    truth = Quad.from_array(corners)
    h = homography_from_quads(frame, truth)

    if background is None:
        background = tuple(int(v) for v in rng.integers(0, BACKGROUND_MAX + 1, size=3))  # type: ignore[assignment]
    values, covered = warp_float(host, h, (canvas_w, canvas_h))
    out = np.empty((canvas_h, canvas_w, 3), dtype=np.float64)
    out[:] = np.asarray(background, dtype=np.float64)
    out[covered] = values[covered]
    return to_u8(out), truth


if __name__ == "__main__":
    from screenmark.imaging import write_png

    rng = np.random.default_rng(7)
    host = synthetic_host(rng)
    capture, quad = paste_on_background(host, rng)
    write_png("synthetic_host.png", host)
    write_png("synthetic_capture.png", capture)
    print("true corners:", [(round(x, 1), round(y, 1)) for x, y in quad.corners])
