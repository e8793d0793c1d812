"""
Unit tests for warping, homography estimation and perspective sampling
"""
import numpy as np
import pytest

from screenmark.errors import DegenerateQuad, NonConvex, OutOfRange, SingularTransform
from screenmark.geometry import (
    UNIT_SQUARE,
    AffineParams,
    Homography,
    Quad,
    apply_affine,
    homography_from_quads,
    random_perspective,
    sample_bilinear,
    warp_perspective,
)


class TestQuad:
    """Test suite for quad orientation and convexity"""

    def test_frame_is_clockwise(self):
        """Test that the frame quad has positive shoelace area"""
        quad = Quad.frame(512, 512)
        assert quad.corners[0] == (0.0, 0.0)
        assert quad.corners[2] == (511.0, 511.0)
        assert quad.signed_area() == pytest.approx(511.0 * 511.0)
        quad.check_convex()

    def test_counterclockwise_rejected(self):
        """Test that reversed order is rejected"""
        quad = Quad(corners=((0, 0), (0, 1), (1, 1), (1, 0)))
        with pytest.raises(NonConvex):
            quad.check_convex()

    def test_bow_tie_rejected(self):
        """Test that a self-intersecting quad is rejected"""
        quad = Quad(corners=((0, 0), (1, 1), (1, 0), (0, 1)))
        with pytest.raises(NonConvex):
            quad.check_convex()

    def test_collinear_rejected(self):
        """Test that three collinear corners are degenerate"""
        quad = Quad(corners=((0, 0), (1, 0), (2, 0), (0, 1)))
        with pytest.raises(DegenerateQuad):
            quad.check_convex()


class TestHomography:
    """Test suite for homography estimation and algebra"""

    def test_identity_from_equal_quads(self):
        """Test that equal quads give the identity"""
        h = homography_from_quads(UNIT_SQUARE, UNIT_SQUARE)
        assert np.allclose(h.matrix, np.eye(3), atol=1e-9)

    def test_translation(self):
        """Test a pure translation"""
        src = Quad.frame(10, 10)
        dst = Quad.from_array(src.array() + np.array([3.0, 4.0]))
        h = homography_from_quads(src, dst)
        assert np.allclose(h.apply([(5.0, 5.0)]), [(8.0, 9.0)])

    def test_maps_corners(self):
        """Test that estimated homographies map every corner"""
        src = Quad(corners=((10, 20), (300, 15), (320, 280), (5, 300)))
        dst = Quad.frame(512, 512)
        h = homography_from_quads(src, dst)
        assert np.allclose(h.apply(src.array()), dst.array(), atol=1e-6)

    def test_inverse_compose(self):
        """Test that a homography composed with its inverse is the identity"""
        h = random_perspective(np.random.default_rng(0), 0.1)
        assert np.allclose(h.inverse().compose(h).matrix, np.eye(3), atol=1e-9)

    def test_rescaled(self):
        """Test that rescaling conjugates the unit square into pixel space"""
        h = random_perspective(np.random.default_rng(1), 0.15)
        px = h.rescaled(101, 51)
        unit = h.apply([(1.0, 1.0)])[0]
        assert np.allclose(px.apply([(100.0, 50.0)])[0], unit * [100.0, 50.0])

    def test_singular_matrix(self):
        """Test that singular matrices are rejected"""
        with pytest.raises(SingularTransform):
            Homography.from_matrix(np.array([[1, 2, 0], [2, 4, 0], [0, 0, 1]]))

    def test_degenerate_quad(self):
        """Test that a collapsed target quad is rejected"""
        with pytest.raises(DegenerateQuad):
            homography_from_quads(UNIT_SQUARE, Quad(corners=((0, 0), (1, 0), (2, 0), (3, 0))))


class TestRandomPerspective:
    """Test suite for random perspective sampling"""

    def test_zero_offset_is_identity(self):
        """Test that no jitter gives the identity"""
        h = random_perspective(np.random.default_rng(0), 0.0)
        assert h == Homography.identity()

    def test_offset_out_of_range(self):
        """Test that offsets beyond 0.2 are rejected"""
        with pytest.raises(OutOfRange):
            random_perspective(np.random.default_rng(0), 0.3)

    def test_corner_displacement_bounded(self):
        """Test that corners move by at most the offset"""
        rng = np.random.default_rng(2)
        for _ in range(20):
            h = random_perspective(rng, 0.1)
            moved = h.apply(UNIT_SQUARE.array())
            assert np.all(np.abs(moved - UNIT_SQUARE.array()) <= 0.1 + 1e-9)

    def test_deterministic(self):
        """Test that equal seeds give equal homographies"""
        a = random_perspective(np.random.default_rng(7), 0.1)
        b = random_perspective(np.random.default_rng(7), 0.1)
        assert a == b


class TestWarping:
    """Test suite for affine and perspective warps"""

    def test_identity_warp(self):
        """Test that the identity warp is lossless"""
        img = np.random.default_rng(3).integers(0, 256, (20, 24, 3), dtype=np.uint8)
        out, mask = warp_perspective(img, Homography.identity(), (24, 20), return_mask=True)
        assert np.array_equal(out, img)
        assert mask.all()

    def test_affine_translation(self):
        """Test an integer shift with black fill"""
        img = np.random.default_rng(4).integers(1, 256, (10, 12), dtype=np.uint8)
        out, mask = apply_affine(img, AffineParams(c=2.0), return_mask=True)
        assert np.array_equal(out[:, 2:], img[:, :-2])
        assert np.all(out[:, :2] == 0)
        assert not mask[:, :2].any()

    def test_singular_affine(self):
        """Test that a singular affine map is rejected"""
        with pytest.raises(SingularTransform):
            apply_affine(np.zeros((4, 4), np.uint8), AffineParams(a=0.0, e=0.0))

    def test_bilinear_midpoint(self):
        """Test interpolation halfway between two pixels"""
        img = np.array([[0.0, 100.0]])
        values, covered = sample_bilinear(img, np.array([0.5, 2.0]), np.array([0.0, 0.0]))
        assert values[0] == pytest.approx(50.0)
        assert covered.tolist() == [True, False]
        assert values[1] == 0.0
