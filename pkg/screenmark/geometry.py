"""
Affine and projective warping, homography estimation and random perspective
sampling.

Pixel centres sit at integer coordinates, x to the right and y down. Warps use
inverse mapping with bilinear interpolation; samples falling outside the
source are black and can be reported through a coverage mask.
"""

from typing import List, Literal, Tuple, Union, overload

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from screenmark.errors import DegenerateQuad, NonConvex, OutOfRange, SingularSystem, SingularTransform
from screenmark.imaging import RasterU8, to_u8

Point = Tuple[float, float]

DET_EPS = 1e-12
MAX_PERSPECTIVE_OFFSET = 0.2


class AffineParams(BaseModel):
    """x' = a*x + b*y + c, y' = d*x + e*y + f."""

    model_config = ConfigDict(frozen=True)

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 1.0
    f: float = 0.0

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def matrix(self) -> npt.NDArray[np.float64]:
        return np.array([[self.a, self.b, self.c], [self.d, self.e, self.f], [0.0, 0.0, 1.0]])


class Homography(BaseModel):
    """3x3 projective transform stored row-major with h[8] = 1."""

    model_config = ConfigDict(frozen=True)

    h: Tuple[float, ...] = Field(default=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0), min_length=9, max_length=9)

    @classmethod
    def from_matrix(cls, m: npt.ArrayLike) -> "Homography":
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) < DET_EPS:
            raise SingularTransform("homography has h33 = 0 and cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise SingularTransform("homography is singular")
        return cls(h=tuple(float(v) for v in m.ravel()))

    @classmethod
    def identity(cls) -> "Homography":
        return cls()

    @property
    def matrix(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.h, dtype=np.float64).reshape(3, 3)

    def inverse(self) -> "Homography":
        m = self.matrix
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise SingularTransform("homography is singular")
        return Homography.from_matrix(np.linalg.inv(m))

    def compose(self, first: "Homography") -> "Homography":
        """Apply ``first`` and then ``self``."""
        return Homography.from_matrix(self.matrix @ first.matrix)

    def rescaled(self, width: int, height: int) -> "Homography":
        """Conjugate a unit-square homography into pixel space of a width x height image."""
        s = np.diag([max(width - 1, 1), max(height - 1, 1), 1.0])
        return Homography.from_matrix(s @ self.matrix @ np.linalg.inv(s))

    def apply(self, points: npt.ArrayLike) -> npt.NDArray[np.float64]:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        homog = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ self.matrix.T
        return homog[:, :2] / homog[:, 2:3]


class Quad(BaseModel):
    """Four corners, clockwise on screen (y down) starting top-left."""

    model_config = ConfigDict(frozen=True)

    corners: Tuple[Point, Point, Point, Point]

    @classmethod
    def from_array(cls, pts: npt.ArrayLike) -> "Quad":
        arr = np.asarray(pts, dtype=np.float64).reshape(4, 2)
        return cls(corners=tuple((float(x), float(y)) for x, y in arr))  # type: ignore[arg-type]

    @classmethod
    def frame(cls, width: float, height: float) -> "Quad":
        """Pixel-centre corners of a width x height image."""
        return cls(corners=((0.0, 0.0), (width - 1.0, 0.0), (width - 1.0, height - 1.0), (0.0, height - 1.0)))

    def array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.corners, dtype=np.float64)

    def signed_area(self) -> float:
        """Shoelace area, positive for clockwise-on-screen order."""
        p = self.array()
        q = np.roll(p, -1, axis=0)
        return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))

    def check_convex(self) -> None:
        p = self.array()
        edges = np.roll(p, -1, axis=0) - p
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        scale = max(float(np.max(np.abs(p))), 1.0) ** 2
        if np.any(np.abs(cross) <= 1e-12 * scale):
            raise DegenerateQuad(f"quad has collinear corners: {self.corners}")
        if not (np.all(cross > 0) or np.all(cross < 0)):
            raise NonConvex(f"quad is not convex: {self.corners}")
        if self.signed_area() <= 0:
            raise NonConvex(f"quad is not clockwise: {self.corners}")


# ----
# Sampling

def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at float coordinates; returns (values, coverage)."""
    height, width = img.shape[:2]
    covered = (xs >= 0) & (xs <= width - 1) & (ys >= 0) & (ys <= height - 1)
    xc = np.clip(xs, 0, width - 1)
    yc = np.clip(ys, 0, height - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xc - x0
    fy = yc - y0

    src = img.astype(np.float64)
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    values = top * (1 - fy) + bottom * fy
    mask = covered if src.ndim == 2 else covered[..., None]
    return np.where(mask, values, 0.0), covered


def _warp_with_matrix(
    img: np.ndarray, inverse: npt.NDArray[np.float64], out_size: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray]:
    out_w, out_h = out_size
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = inverse[2, 0] * xs + inverse[2, 1] * ys + inverse[2, 2]
    safe = np.abs(den) > DET_EPS
    den = np.where(safe, den, 1.0)
    sx = (inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]) / den
    sy = (inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]) / den
    sx = np.where(safe, sx, -1.0)
    sy = np.where(safe, sy, -1.0)
    return sample_bilinear(img, sx, sy)


@overload
def apply_affine(img: RasterU8, params: AffineParams, return_mask: Literal[False] = False) -> RasterU8: ...
@overload
def apply_affine(img: RasterU8, params: AffineParams, return_mask: Literal[True]) -> Tuple[RasterU8, np.ndarray]: ...
def apply_affine(
    img: RasterU8, params: AffineParams, return_mask: bool = False
) -> Union[RasterU8, Tuple[RasterU8, np.ndarray]]:
    if abs(params.determinant) <= DET_EPS:
        raise SingularTransform(f"affine transform is singular: {params}")
    values, covered = _warp_with_matrix(img, np.linalg.inv(params.matrix()), (img.shape[1], img.shape[0]))
    out = to_u8(values)
    return (out, covered) if return_mask else out


@overload
def warp_perspective(
    img: RasterU8, h: Homography, out_size: Tuple[int, int], return_mask: Literal[False] = False
) -> RasterU8: ...
@overload
def warp_perspective(
    img: RasterU8, h: Homography, out_size: Tuple[int, int], return_mask: Literal[True]
) -> Tuple[RasterU8, np.ndarray]: ...
def warp_perspective(
    img: RasterU8, h: Homography, out_size: Tuple[int, int], return_mask: bool = False
) -> Union[RasterU8, Tuple[RasterU8, np.ndarray]]:
    """Warp ``img`` by ``h`` (source to destination) into an out_size = (width, height) canvas."""
    values, covered = warp_float(img, h, out_size)
    out = to_u8(values)
    return (out, covered) if return_mask else out


def warp_float(img: np.ndarray, h: Homography, out_size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Same as warp_perspective without the final 8-bit rounding."""
    m = h.matrix
    if abs(np.linalg.det(m)) <= DET_EPS:
        raise SingularTransform("homography is singular")
    return _warp_with_matrix(img, np.linalg.inv(m), out_size)


# ----
# Estimation

def _conditioning(points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    centroid = points.mean(axis=0)
    spread = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    if spread < DET_EPS:
        raise DegenerateQuad("all corners coincide")
    s = np.sqrt(2.0) / spread
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def homography_from_quads(src: Quad, dst: Quad) -> Homography:
    """Direct linear transform on the 4 correspondences, Hartley-normalized."""
    src.check_convex()
    dst.check_convex()
    p = src.array()
    q = dst.array()
    t_src = _conditioning(p)
    t_dst = _conditioning(q)
    pn = np.hstack([p, np.ones((4, 1))]) @ t_src.T
    qn = np.hstack([q, np.ones((4, 1))]) @ t_dst.T

    rows: List[List[float]] = []
    for (x, y, _), (u, v, _) in zip(pn, qn):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[7] < 1e-10 * sv[0]:
        raise SingularSystem("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography.from_matrix(m)


UNIT_SQUARE = Quad(corners=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))


def random_perspective(
    rng: np.random.Generator, max_corner_offset: float, max_attempts: int = 100
) -> Homography:
    """Unit-square homography whose corners move by at most ``max_corner_offset`` per axis."""
    if not 0.0 <= max_corner_offset <= MAX_PERSPECTIVE_OFFSET:
        raise OutOfRange(f"max_corner_offset must lie in [0, {MAX_PERSPECTIVE_OFFSET}]")
    if max_corner_offset == 0.0:
        return Homography.identity()
    for _ in range(max_attempts):
        jitter = rng.uniform(-max_corner_offset, max_corner_offset, size=(4, 2))
        target = Quad.from_array(UNIT_SQUARE.array() + jitter)
        try:
            return homography_from_quads(UNIT_SQUARE, target)
        except (DegenerateQuad, NonConvex, SingularSystem, SingularTransform):
            continue
    return Homography.identity()

