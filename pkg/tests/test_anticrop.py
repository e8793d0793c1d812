"""
Unit tests for symmetric-template anti-crop recovery
"""
import numpy as np
import pytest

from screenmark.anticrop import (
    SymmetryProfile,
    column_symmetry,
    embed_template,
    highpass_profile,
    make_symmetric_template,
    recover_subimages,
    row_symmetry,
    standardize,
    wiener_residual,
)
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
from screenmark.utils.synthetic import crop_edge, synthetic_host

SIDE = 128
SUB = 64


def templated_host(seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    host = synthetic_host(rng, SIDE)
    tmpl = make_symmetric_template(rng, SIDE, SIDE, 2.0)
    host[:, :, 0] = embed_template(host[:, :, 0], tmpl)
    return host


class TestTemplate:
    """Test suite for template generation and embedding"""

    def test_double_mirror_symmetry(self):
        """Test that the template mirrors about both centre axes and has zero mean"""
        tmpl = make_symmetric_template(np.random.default_rng(0), 64, 32, 2.0)
        assert tmpl.plane.shape == (32, 64)
        assert np.array_equal(tmpl.plane, tmpl.plane[:, ::-1])
        assert np.array_equal(tmpl.plane, tmpl.plane[::-1, :])
        assert abs(tmpl.plane.mean()) < 1e-9

    def test_odd_dimensions(self):
        """Test that odd sizes are rejected"""
        with pytest.raises(OddDimensions):
            make_symmetric_template(np.random.default_rng(0), 63, 32, 2.0)

    def test_negative_amplitude(self):
        """Test that a negative amplitude is rejected"""
        with pytest.raises(OutOfRange):
            make_symmetric_template(np.random.default_rng(0), 64, 64, -1.0)

    def test_embed_checks(self):
        """Test channel and shape checks on embedding"""
        tmpl = make_symmetric_template(np.random.default_rng(0), 16, 16, 2.0)
        with pytest.raises(ChannelMismatch):
            embed_template(np.zeros((16, 16, 3), np.uint8), tmpl)
        with pytest.raises(ShapeMismatch):
            embed_template(np.zeros((16, 8), np.uint8), tmpl)

    def test_embed_stays_in_range(self):
        """Test that embedding clamps at white"""
        tmpl = make_symmetric_template(np.random.default_rng(0), 16, 16, 5.0)
        out = embed_template(np.full((16, 16), 255, np.uint8), tmpl)
        assert out.dtype == np.uint8
        assert out.max() == 255


class TestSymmetryProfile:
    """Test suite for residuals and mirror-correlation profiles"""

    def test_template_peak_at_centre(self):
        """Test that the template itself peaks at the centre axis with score 1"""
        tmpl = make_symmetric_template(np.random.default_rng(1), 128, 64, 2.0)
        profile = column_symmetry(tmpl.plane)
        assert int(np.argmax(profile.scores)) == 64
        assert profile.scores[64] == pytest.approx(1.0)
        rows = row_symmetry(tmpl.plane)
        assert int(np.argmax(rows.scores)) == 32

    def test_white_noise_has_no_peak(self):
        """Test that noise stays well below a symmetric score"""
        noise = np.random.default_rng(2).standard_normal((256, 256))
        assert column_symmetry(noise).scores.max() < 0.25

    def test_axis_moves_with_crop(self):
        """Test that cropping from the left shifts the axis"""
        tmpl = make_symmetric_template(np.random.default_rng(3), 256, 128, 2.0)
        profile = column_symmetry(tmpl.plane[:, 56:])
        assert int(np.argmax(profile.scores)) == 72

    def test_too_narrow(self):
        """Test that very narrow residuals are rejected"""
        with pytest.raises(TooNarrow):
            column_symmetry(np.zeros((10, 6)))

    def test_standardize(self):
        """Test zero mean, unit variance and the constant-input error"""
        z = standardize(np.array([1.0, 2.0, 3.0, 4.0]))
        assert z.mean() == pytest.approx(0.0)
        assert z.std() == pytest.approx(1.0)
        with pytest.raises(ZeroVariance):
            standardize(np.ones(5))

    def test_highpass_even_window(self):
        """Test that even high-pass windows are rejected"""
        profile = SymmetryProfile(scores=np.zeros(16), axis="column")
        with pytest.raises(EvenWindow):
            highpass_profile(profile, 30)

    def test_wiener_residual_of_flat_is_zero(self):
        """Test that a flat image leaves no residual"""
        assert np.allclose(wiener_residual(np.full((12, 12), 90, np.uint8)), 0.0)

    def test_wiener_residual_borders(self):
        """Test that mirrored borders keep edge residuals at the texture scale"""
        rng = np.random.default_rng(4)
        img = (200 + rng.integers(-3, 4, (32, 32))).astype(np.uint8)
        residual = wiener_residual(img)
        assert residual.shape == img.shape
        assert np.abs(residual).max() <= 10.0
        assert np.abs(residual[0]).mean() <= 2.0 * np.abs(residual[1:-1, 1:-1]).mean() + 1.0



class TestRecoverSubimages:
    """Test suite for sub-image recovery from crops"""

    def test_full_frame(self):
        """Test that an uncropped frame yields the four quadrants"""
        bounds = recover_subimages(templated_host(), SUB)
        assert SUB in bounds.column_axes
        assert SUB in bounds.row_axes
        found = {(r.x, r.y, r.quadrant) for r in bounds.rects}
        assert found == {(0, 0, "TL"), (64, 0, "TR"), (0, 64, "BL"), (64, 64, "BR")}

    def test_right_crop(self):
        """Test that a right-edge crop keeps only the left column of sub-images"""
        cropped = crop_edge(templated_host(), 0.25, "right")
        bounds = recover_subimages(cropped, SUB)
        assert {(r.x, r.y, r.quadrant) for r in bounds.rects} == {(0, 0, "TL"), (0, 64, "BL")}

    def test_left_crop(self):
        """Test that a left-edge crop shifts the recovered origin"""
        cropped = crop_edge(templated_host(), 0.25, "left")
        bounds = recover_subimages(cropped, SUB)
        assert 32 in bounds.column_axes
        assert {(r.x, r.quadrant) for r in bounds.rects} == {(32, "TR"), (32, "BR")}

    def test_crop_smaller_than_subimage(self):
        """Test that a crop narrower than one sub-image fails"""
        cropped = crop_edge(templated_host(), 0.55, "right")
        with pytest.raises(NoSymmetryFound):
            recover_subimages(cropped, SUB)

    def test_no_template(self):
        """Test that an unmarked noise image has no symmetry"""
        img = np.random.default_rng(5).integers(0, 256, (256, 256, 3), dtype=np.uint8)
        with pytest.raises(NoSymmetryFound):
            recover_subimages(img, SUB)

    def test_rejects_gray(self):
        """Test that recovery needs an RGB crop"""
        with pytest.raises(ChannelMismatch):
            recover_subimages(np.zeros((128, 128), np.uint8), SUB)
