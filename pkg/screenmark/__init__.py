from .codec import decode_with_anticrop, embed, extract, gen_pattern_bank
from .config import ScreenmarkConfig, load_config
from .errors import ScreenmarkError
from .jnd import jnd_map
from .locate import locate_and_rectify

__all__ = [
    "ScreenmarkConfig",
    "ScreenmarkError",
    "decode_with_anticrop",
    "embed",
    "extract",
    "gen_pattern_bank",
    "jnd_map",
    "load_config",
    "locate_and_rectify",
]
