"""
Unit tests for configuration loading and overrides
"""
import os
import shutil
import tempfile

import pytest
import toml

from screenmark.config import (
    ChannelConfig,
    EmbedConfig,
    Ramp,
    ScreenmarkConfig,
    apply_overrides,
    dump_config,
    load_config,
    worker_count,
)
from screenmark.errors import ConfigError, ImageIOError


class TestConfigModels:
    """Test suite for configuration models"""

    def test_defaults(self):
        """Test a few documented default values"""
        config = ScreenmarkConfig()
        assert config.embed.frame_side == 512
        assert config.embed.sub_side == 256
        assert config.embed.channels == ("G", "B")
        assert config.locate.canny_low == 50.0
        assert config.anticrop.peak_threshold == 0.15
        assert config.channel.min_theta3 == pytest.approx(0.7)

    def test_ramp(self):
        """Test the linear schedule and its saturation"""
        ramp = Ramp(steps=100, limit=24.0)
        assert ramp.at(0) == 0.0
        assert ramp.at(50) == pytest.approx(12.0)
        assert ramp.at(1000) == 24.0

    def test_embed_validation(self):
        """Test that the frame must hold 2x2 sub-images"""
        with pytest.raises(ValueError):
            EmbedConfig(frame_side=512, sub_side=200)
        with pytest.raises(ValueError):
            EmbedConfig(channels=("G", "X"))

    def test_channel_indices(self):
        """Test channel name to index mapping"""
        assert EmbedConfig().channel_indices == (1, 2)

    def test_zero_severity(self):
        """Test that the zero-severity channel disables every stage"""
        cfg = ChannelConfig.zero_severity(seed=3)
        assert cfg.seed == 3
        assert cfg.moire_probability == 0.0
        assert cfg.noise_ramp.at(10**6) == 0.0


class TestLoadConfig:
    """Test suite for TOML loading"""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary working directory"""
        path = tempfile.mkdtemp()
        cwd = os.getcwd()
        os.chdir(path)
        yield path
        os.chdir(cwd)
        shutil.rmtree(path, ignore_errors=True)

    def test_missing_default_file(self, temp_dir):
        """Test that a missing ./config.toml falls back to defaults"""
        assert load_config() == ScreenmarkConfig()

    def test_invalid_default_file(self, temp_dir):
        """Test that an undecodable ./config.toml falls back to defaults"""
        with open("config.toml", "w") as f:
            f.write("this is = = not toml")
        assert load_config() == ScreenmarkConfig()

    def test_explicit_file(self, temp_dir):
        """Test reading values from an explicit file"""
        path = os.path.join(temp_dir, "custom.toml")
        with open(path, "w") as f:
            f.write("[channel]\nseed = 9\nstep = 500\n\n[embed]\nper_bit_gain = 0.5\n")
        config = load_config(path)
        assert config.channel.seed == 9
        assert config.channel.step == 500
        assert config.embed.per_bit_gain == 0.5
        assert config.locate == ScreenmarkConfig().locate

    def test_explicit_missing_file(self, temp_dir):
        """Test that an explicit missing path is an I/O error"""
        with pytest.raises(ImageIOError):
            load_config(os.path.join(temp_dir, "nope.toml"))

    def test_explicit_invalid_values(self, temp_dir):
        """Test that invalid values are a configuration error"""
        path = os.path.join(temp_dir, "bad.toml")
        with open(path, "w") as f:
            f.write("[locate]\nmedian_window = 4\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_dump_round_trip(self, temp_dir):
        """Test that a dumped configuration loads back unchanged"""
        config = apply_overrides(ScreenmarkConfig(), {"channel.seed": 5, "embed.per_bit_gain": 0.4})
        path = os.path.join(temp_dir, "dumped.toml")
        dump_config(config, path)
        assert toml.load(path)["channel"]["seed"] == 5
        assert load_config(path) == config


class TestOverrides:
    """Test suite for dotted overrides and environment"""

    def test_nested_override(self):
        """Test overriding a nested ramp limit"""
        config = apply_overrides(ScreenmarkConfig(), {"channel.noise_ramp.limit": 2.0, "channel.step": None})
        assert config.channel.noise_ramp.limit == 2.0
        assert config.channel.step == 0

    def test_unknown_key(self):
        """Test that unknown keys are rejected"""
        with pytest.raises(ConfigError):
            apply_overrides(ScreenmarkConfig(), {"channel.nope": 1})

    def test_invalid_value(self):
        """Test that overrides are validated"""
        with pytest.raises(ConfigError):
            apply_overrides(ScreenmarkConfig(), {"channel.moire_probability": 2.0})

    def test_worker_count(self, monkeypatch):
        """Test that SCREENMARK_THREADS wins over the requested count"""
        monkeypatch.delenv("SCREENMARK_THREADS", raising=False)
        assert worker_count(None) == 1
        assert worker_count(3) == 3
        monkeypatch.setenv("SCREENMARK_THREADS", "6")
        assert worker_count(3) == 6
        monkeypatch.setenv("SCREENMARK_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_count(3)
