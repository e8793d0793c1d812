"""
Unit tests for the command-line harness
"""
import json
import os
import shutil
import tempfile

import numpy as np
import pytest

from screenmark.cli import main
from screenmark.imaging import read_png, write_png
from screenmark.jnd import read_jnd_sidecar
from screenmark.utils.synthetic import paste_on_background, synthetic_host

KEY = "5ec011d0beef0042"
PAYLOAD = "0123456789abcdef0123456789abcdef"

ZERO_CHANNEL_TOML = """
[channel]
moire_probability = 0.0
motion_blur_probability = 0.0

[channel.brightness_ramp]
steps = 1
limit = 0.0

[channel.contrast_ramp]
steps = 1
limit = 0.0

[channel.saturation_ramp]
steps = 1
limit = 0.0

[channel.noise_ramp]
steps = 1
limit = 0.0

[channel.blur.defocus_ramp]
steps = 1
limit = 0.0
"""


def last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


@pytest.fixture
def workdir():
    """Create a directory holding a 512x512 synthetic host"""
    path = tempfile.mkdtemp()
    host = synthetic_host(np.random.default_rng(31))
    write_png(os.path.join(path, "host.png"), host)
    yield path
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def marked(workdir, capsys):
    """Embed a fixed payload and return the marked image path"""
    out = os.path.join(workdir, "marked.png")
    assert main(["embed", os.path.join(workdir, "host.png"), out, "--key", KEY, "--payload", PAYLOAD]) == 0
    capsys.readouterr()
    return out


class TestEmbedExtract:
    """Test suite for embed and extract"""

    def test_embed_reports_quality(self, workdir, capsys):
        """Test the embed result on stdout"""
        out = os.path.join(workdir, "marked.png")
        code = main(["embed", os.path.join(workdir, "host.png"), out, "--key", KEY, "--payload", PAYLOAD])
        assert code == 0
        result = last_json(capsys)
        assert result["payload"] == PAYLOAD
        assert result["psnr"] >= 28.0
        assert read_png(out).shape == (512, 512, 3)

    def test_extract(self, marked, capsys):
        """Test decoding the embedded payload with BER against the truth"""
        assert main(["extract", marked, "--key", KEY, "--truth", PAYLOAD]) == 0
        result = last_json(capsys)
        assert result["payload"] == PAYLOAD
        assert result["ber"] == 0.0

    def test_extract_anticrop(self, marked, capsys):
        """Test anti-crop decoding of an uncropped frame"""
        assert main(["extract", marked, "--key", KEY, "--anticrop"]) == 0
        result = last_json(capsys)
        assert result["payload"] == PAYLOAD
        assert len(result["subimages"]) == 4

    def test_bad_payload(self, workdir, capsys):
        """Test that a malformed payload exits with 1"""
        out = os.path.join(workdir, "marked.png")
        code = main(["embed", os.path.join(workdir, "host.png"), out, "--key", KEY, "--payload", "abc"])
        assert code == 1
        assert last_json(capsys)["error"] == "PayloadLengthMismatch"
        assert not os.path.exists(out)

    def test_bad_key(self, workdir, capsys):
        """Test that a malformed key exits with 1"""
        code = main(["embed", os.path.join(workdir, "host.png"), os.path.join(workdir, "o.png"), "--key", "xyz"])
        assert code == 1
        assert last_json(capsys)["error"] == "InvalidKey"

    def test_missing_file(self, workdir, capsys):
        """Test that a missing input exits with 3"""
        code = main(["embed", os.path.join(workdir, "nope.png"), os.path.join(workdir, "o.png"), "--key", KEY])
        assert code == 3
        assert last_json(capsys)["error"] == "ImageIOError"

    def test_usage_errors(self):
        """Test that argument errors exit with 1"""
        assert main([]) == 1
        assert main(["embed"]) == 1
        assert main(["frobnicate"]) == 1


class TestAttack:
    """Test suite for the channel subcommand"""

    def test_zero_severity_identity(self, marked, workdir, capsys):
        """Test that a zero-severity channel leaves the image unchanged"""
        config = os.path.join(workdir, "zero.toml")
        with open(config, "w") as f:
            f.write(ZERO_CHANNEL_TOML)
        out = os.path.join(workdir, "attacked.png")
        assert main(["--config", config, "attack", marked, out, "--seed", "4"]) == 0
        assert last_json(capsys)["stages"] == []
        assert np.array_equal(read_png(out), read_png(marked))

    def test_replay(self, marked, workdir, capsys):
        """Test that replaying a written trace reproduces the output"""
        first = os.path.join(workdir, "a.png")
        trace = os.path.join(workdir, "a.trace.json")
        assert main(["attack", marked, first, "--seed", "7", "--step", "2000", "--trace", trace]) == 0
        assert os.path.exists(trace)
        second = os.path.join(workdir, "b.png")
        assert main(["attack", marked, second, "--replay", trace]) == 0
        assert np.array_equal(read_png(first), read_png(second))

    def test_bad_trace(self, marked, workdir, capsys):
        """Test that an invalid trace is a processing error"""
        trace = os.path.join(workdir, "bad.json")
        with open(trace, "w") as f:
            f.write('{"stages": [{"stage": "warp"}]}')
        assert main(["attack", marked, os.path.join(workdir, "x.png"), "--replay", trace]) == 1
        assert last_json(capsys)["error"] == "ConfigError"


class TestLocateAndMaps:
    """Test suite for locate, recover and jnd-map"""

    def test_locate(self, workdir, capsys):
        """Test locating a pasted host and writing its corners"""
        rng = np.random.default_rng(8)
        capture, _ = paste_on_background(synthetic_host(rng, 256), rng, (400, 400), 0.0)
        path = os.path.join(workdir, "capture.png")
        write_png(path, capture)
        out = os.path.join(workdir, "rectified.png")
        assert main(["locate", path, out]) == 0
        result = last_json(capsys)
        assert len(result["quad"]) == 4
        assert os.path.exists(os.path.join(workdir, "rectified.quad.json"))
        assert read_png(out).shape == (512, 512, 3)

    def test_locate_failure(self, workdir, capsys):
        """Test that a blank capture exits with 2"""
        path = os.path.join(workdir, "blank.png")
        write_png(path, np.full((128, 128, 3), 30, np.uint8))
        assert main(["locate", path, os.path.join(workdir, "r.png")]) == 2
        assert last_json(capsys)["error"] == "LocalizationFailed"

    def test_recover(self, marked, capsys):
        """Test sub-image recovery on a whole frame"""
        assert main(["recover", marked]) == 0
        result = last_json(capsys)
        assert len(result["rects"]) == 4
        assert 256 in result["column_axes"]

    def test_jnd_map(self, workdir, capsys):
        """Test the preview PNG and float sidecar"""
        out = os.path.join(workdir, "jnd.png")
        assert main(["jnd-map", os.path.join(workdir, "host.png"), out]) == 0
        result = last_json(capsys)
        preview = read_png(out)
        assert preview.shape == (512, 512)
        jnd = read_jnd_sidecar(os.path.join(workdir, "jnd.jndf"))
        assert jnd.plane.min() == pytest.approx(result["min"])


class TestEvaluate:
    """Test suite for the evaluate subcommand"""

    def test_small_grid(self, workdir, capsys, monkeypatch):
        """Test a one-image grid writing its report files"""
        monkeypatch.delenv("SCREENMARK_THREADS", raising=False)
        spec = os.path.join(workdir, "exp.toml")
        with open(spec, "w") as f:
            f.write('n_images = 1\nseeds = [0]\n\n[[crop_grid]]\ngamma = 0.0\nedge = "left"\n')
        out = os.path.join(workdir, "report")
        assert main(["evaluate", "--spec", spec, "--out", out]) == 0
        result = last_json(capsys)
        assert result["rows"] == 1
        assert result["failures"] == 0
        assert sorted(os.listdir(out)) == ["config.toml", "report.csv", "report.json", "runtime.csv"]
        assert result["runtime"].endswith("runtime.csv")
