"""
Unit tests for raster primitives, metrics and PNG I/O
"""
import math
import os
import shutil
import tempfile

import numpy as np
import pytest
from PIL import Image

from screenmark.errors import (
    ChannelMismatch,
    EvenKernel,
    EvenWindow,
    ImageIOError,
    ImageTooSmall,
    LengthMismatch,
    ShapeMismatch,
)
from screenmark.imaging import (
    ber,
    convolve2d,
    luma,
    median_filter,
    psnr,
    quality_report,
    read_png,
    resize,
    ssim,
    to_grayscale,
    to_u8,
    write_png,
)


class TestConversions:
    """Test suite for rounding and colour conversion"""

    def test_to_u8_rounds_half_away_from_zero(self):
        """Test that halves round up for positive values and the result is clamped"""
        out = to_u8(np.array([-3.0, -0.5, 0.49, 0.5, 1.5, 2.5, 254.5, 300.0]))
        assert out.tolist() == [0, 0, 0, 1, 2, 3, 255, 255]
        assert out.dtype == np.uint8

    def test_luma_is_unrounded(self):
        """Test the luminance of a saturated orange pixel"""
        img = np.array([[[200, 100, 0]]], dtype=np.uint8)
        assert luma(img)[0, 0] == pytest.approx(118.5)

    def test_grayscale_of_gray_pixels_is_identity(self):
        """Test that equal channels map to the same gray level"""
        img = np.full((4, 4, 3), 77, dtype=np.uint8)
        assert np.all(to_grayscale(img) == 77)

    def test_luma_rejects_single_channel(self):
        """Test that luma needs three channels"""
        with pytest.raises(ChannelMismatch):
            luma(np.zeros((4, 4), dtype=np.uint8))


class TestMetrics:
    """Test suite for PSNR, SSIM and BER"""

    def test_psnr_identical_is_infinite(self):
        """Test PSNR of an image with itself"""
        img = np.random.default_rng(0).integers(0, 256, (16, 16), dtype=np.uint8)
        assert psnr(img, img) == math.inf

    def test_psnr_unit_error(self):
        """Test PSNR when every pixel is off by one"""
        a = np.full((8, 8), 100, dtype=np.uint8)
        b = a + 1
        assert psnr(a, b) == pytest.approx(10 * math.log10(255.0**2), abs=1e-9)

    def test_psnr_shape_mismatch(self):
        """Test that different shapes are rejected"""
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))

    def test_ssim_identical_is_one(self):
        """Test SSIM of an image with itself, gray and colour"""
        rng = np.random.default_rng(1)
        gray = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        assert ssim(gray, gray) == pytest.approx(1.0)
        assert ssim(rgb, rgb) == pytest.approx(1.0)

    def test_ssim_drops_with_noise(self):
        """Test that noise lowers SSIM"""
        rng = np.random.default_rng(2)
        img = np.tile(np.arange(64, dtype=np.uint8) * 3, (64, 1))
        noisy = to_u8(img + rng.normal(0, 20, img.shape))
        assert ssim(img, noisy) < 0.9

    def test_ssim_too_small(self):
        """Test that images smaller than the window are rejected"""
        with pytest.raises(ImageTooSmall):
            ssim(np.zeros((10, 10), np.uint8), np.zeros((10, 10), np.uint8))

    def test_ber(self):
        """Test bit error rate on a short string"""
        assert ber(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])) == 0.25
        assert ber(np.array([1, 1]), np.array([1, 1])) == 0.0

    def test_ber_length_mismatch(self):
        """Test that strings of different length are rejected"""
        with pytest.raises(LengthMismatch):
            ber(np.array([0, 1]), np.array([0, 1, 1]))

    def test_quality_report_fields(self):
        """Test that the report carries psnr, ssim and an optional ber"""
        a = np.full((16, 16, 3), 50, dtype=np.uint8)
        report = quality_report(a, a, 0.0)
        assert report.psnr == math.inf
        assert report.ssim == pytest.approx(1.0)
        assert report.ber == 0.0


class TestFiltering:
    """Test suite for convolution and median filtering"""

    def test_convolve_identity_kernel(self):
        """Test that a delta kernel leaves the image unchanged"""
        img = np.random.default_rng(3).integers(0, 256, (9, 9)).astype(np.uint8)
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        assert np.array_equal(convolve2d(img, kernel), img.astype(np.float64))

    def test_convolve_even_kernel(self):
        """Test that even kernels are rejected"""
        with pytest.raises(EvenKernel):
            convolve2d(np.zeros((5, 5)), np.ones((2, 2)))

    def test_median_removes_impulse(self):
        """Test that a single bright pixel disappears"""
        img = np.full((9, 9), 10, dtype=np.uint8)
        img[4, 4] = 255
        assert np.all(median_filter(img, 3) == 10)

    def test_median_even_window(self):
        """Test that even windows are rejected"""
        with pytest.raises(EvenWindow):
            median_filter(np.zeros((5, 5), np.uint8), 4)

    def test_median_rejects_rgb(self):
        """Test that the median filter is single-channel"""
        with pytest.raises(ChannelMismatch):
            median_filter(np.zeros((5, 5, 3), np.uint8), 3)


class TestPngIO:
    """Test suite for PNG reading, writing and resizing"""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for image files"""
        path = tempfile.mkdtemp()
        yield path
        shutil.rmtree(path, ignore_errors=True)

    def test_round_trip_rgb(self, temp_dir):
        """Test that an RGB image survives write and read"""
        img = np.random.default_rng(4).integers(0, 256, (20, 30, 3), dtype=np.uint8)
        path = os.path.join(temp_dir, "img.png")
        write_png(path, img)
        assert np.array_equal(read_png(path), img)

    def test_round_trip_gray(self, temp_dir):
        """Test that a gray image stays single-channel"""
        img = np.random.default_rng(5).integers(0, 256, (12, 12), dtype=np.uint8)
        path = os.path.join(temp_dir, "gray.png")
        write_png(path, img)
        loaded = read_png(path)
        assert loaded.shape == (12, 12)
        assert np.array_equal(loaded, img)

    def test_alpha_is_dropped(self, temp_dir):
        """Test that RGBA input loads as RGB"""
        path = os.path.join(temp_dir, "alpha.png")
        Image.new("RGBA", (8, 6), (10, 20, 30, 128)).save(path)
        loaded = read_png(path)
        assert loaded.shape == (6, 8, 3)
        assert loaded[0, 0].tolist() == [10, 20, 30]

    def test_missing_file(self, temp_dir):
        """Test that a missing file is an I/O error"""
        with pytest.raises(ImageIOError):
            read_png(os.path.join(temp_dir, "missing.png"))

    def test_not_an_image(self, temp_dir):
        """Test that garbage bytes are an I/O error"""
        path = os.path.join(temp_dir, "bad.png")
        with open(path, "wb") as f:
            f.write(b"not a png")
        with pytest.raises(ImageIOError):
            read_png(path)

    def test_resize_shape(self):
        """Test that resize returns the requested size"""
        img = np.zeros((40, 30, 3), dtype=np.uint8)
        assert resize(img, 64, 32).shape == (32, 64, 3)
