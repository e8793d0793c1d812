"""
Reference watermark codec.

Each payload bit selects the sign of one keyed +/-1 pattern; the summed
residual is clipped to the JND budget and added to the G and B channels of all
four sub-images. Decoding correlates the high-frequency residual of the
capture against the same patterns and votes across sub-images.
"""

import functools
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog
from pydantic import BaseModel, ConfigDict

from screenmark.anticrop import CropBounds, make_symmetric_template, recover_subimages
from screenmark.config import AnticropConfig, EmbedConfig
from screenmark.errors import (
    DecodeFailed,
    ImageIOError,
    InvalidKey,
    OrthogonalityViolation,
    PayloadLengthMismatch,
    ShapeMismatch,
)
from screenmark.imaging import BitString, RasterF, RasterU8, box_blur, to_u8
from screenmark.jnd import JndMap

PAYLOAD_BITS = 127
PAYLOAD_HEX_CHARS = 32
MAX_ORTHOGONALITY_RETRIES = 3
MIN_PATTERN_SIDE = 64
TEMPLATE_STREAM = 0x7E4D

logger = structlog.get_logger("codec")


class PatternBank(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    key: int
    side: int
    chip: int
    patterns: npt.NDArray[np.int8]
    max_cross_correlation: float

    @property
    def length(self) -> int:
        return int(self.patterns.shape[0])

    @cached_property
    def flat(self) -> npt.NDArray[np.float32]:
        return self.patterns.reshape(self.length, -1).astype(np.float32)


def orthogonality_bound(side: int, chip: int) -> float:
    return max(0.05, 5.0 / (side // chip))


@functools.lru_cache(maxsize=8)
def gen_pattern_bank(key: int, length: int = PAYLOAD_BITS, side: int = 256, chip: int = 2) -> PatternBank:
    """Keyed bank of near-orthogonal +/-1 planes, deterministic in (key, length, side, chip)."""
    if side < MIN_PATTERN_SIDE:
        raise ShapeMismatch(f"pattern side must be at least {MIN_PATTERN_SIDE}, got {side}")
    if side % chip:
        raise ShapeMismatch(f"chip {chip} does not divide side {side}")
    cells = side // chip
    bound = orthogonality_bound(side, chip)
    worst = 1.0
    for attempt in range(MAX_ORTHOGONALITY_RETRIES + 1):
        rng = np.random.default_rng([key, attempt])
        small = (rng.integers(0, 2, size=(length, cells, cells), dtype=np.int8) * 2 - 1).astype(np.int8)
        flat = small.reshape(length, -1).astype(np.float32)
        gram = (flat @ flat.T) / flat.shape[1]
        np.fill_diagonal(gram, 0.0)
        worst = float(np.max(np.abs(gram))) if length > 1 else 0.0
        if worst <= bound:
            patterns = np.repeat(np.repeat(small, chip, axis=1), chip, axis=2)
            logger.debug("pattern bank", key=f"{key:016x}", attempt=attempt, worst=worst)
            return PatternBank(key=key, side=side, chip=chip, patterns=patterns, max_cross_correlation=worst)
        logger.warning("pattern bank retry", attempt=attempt, worst=worst, bound=bound)
    raise OrthogonalityViolation(f"pattern bank for key {key:016x} exceeds |corr| {bound} ({worst:.4f})")


def bank_for(key: int, cfg: EmbedConfig) -> PatternBank:
    return gen_pattern_bank(key, cfg.payload_bits, cfg.sub_side, cfg.chip)


# ----
# Payload and key parsing

def payload_from_hex(text: str, bits: int = PAYLOAD_BITS) -> BitString:
    text = text.strip().lower().removeprefix("0x")
    if len(text) != PAYLOAD_HEX_CHARS:
        raise PayloadLengthMismatch(f"payload must be {PAYLOAD_HEX_CHARS} hex characters, got {len(text)}")
    try:
        value = int(text, 16)
    except ValueError as e:
        raise PayloadLengthMismatch(f"payload is not hexadecimal: {text}") from e
    if value >> bits:
        raise PayloadLengthMismatch(f"payload exceeds {bits} bits (top bit must be 0)")
    return np.array([(value >> (bits - 1 - i)) & 1 for i in range(bits)], dtype=np.uint8)


def payload_to_hex(bits: BitString) -> str:
    value = 0
    for b in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(b)
    return f"{value:0{PAYLOAD_HEX_CHARS}x}"


def payload_from_bitfile(path: Union[str, Path], bits: int = PAYLOAD_BITS) -> BitString:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read payload ({e})") from e
    digits = [c for c in text if not c.isspace()]
    if any(c not in "01" for c in digits):
        raise PayloadLengthMismatch(f"{path}: payload file must contain only 0 and 1")
    if len(digits) != bits:
        raise PayloadLengthMismatch(f"{path}: expected {bits} bits, got {len(digits)}")
    return np.array([int(c) for c in digits], dtype=np.uint8)


def key_from_hex(text: str) -> int:
    cleaned = text.strip().lower().removeprefix("0x")
    if not cleaned or len(cleaned) > 16:
        raise InvalidKey(f"key must be 1 to 16 hex characters, got '{text}'")
    try:
        return int(cleaned, 16)
    except ValueError as e:
        raise InvalidKey(f"key is not hexadecimal: '{text}'") from e


def random_payload(rng: np.random.Generator, bits: int = PAYLOAD_BITS) -> BitString:
    return rng.integers(0, 2, size=bits, dtype=np.uint8)


# ----
# Embedding

def payload_residual(bank: PatternBank, payload: BitString, gain: float) -> RasterF:
    """gain * sum_i s_i P_i with s_i = +1 for bit 1 and -1 for bit 0."""
    payload = np.asarray(payload)
    if payload.size != bank.length:
        raise PayloadLengthMismatch(f"payload has {payload.size} bits, expected {bank.length}")
    signs = np.where(payload > 0, 1.0, -1.0).astype(np.float32)
    summed = (signs @ bank.flat).astype(np.float64)
    return gain * summed.reshape(bank.side, bank.side)


def embed(host: RasterU8, payload: BitString, key: int, jnd: JndMap, cfg: EmbedConfig = EmbedConfig()) -> RasterU8:
    side = cfg.frame_side
    if host.shape != (side, side, 3):
        raise ShapeMismatch(f"host must be {side}x{side} RGB, got {host.shape}")
    if np.asarray(payload).size != cfg.payload_bits:
        raise PayloadLengthMismatch(f"payload has {np.asarray(payload).size} bits, expected {cfg.payload_bits}")
    if jnd.plane.shape != (side, side):
        raise ShapeMismatch(f"JND map {jnd.plane.shape} does not match host")

    residual = payload_residual(bank_for(key, cfg), payload, cfg.per_bit_gain)
    limit = cfg.eta * jnd.plane
    bounded = np.clip(np.tile(residual, (2, 2)), -limit, limit)

    out = host.astype(np.float64)
    for c in cfg.channel_indices:
        out[:, :, c] += bounded
    if cfg.template_amplitude > 0:
        template = make_symmetric_template(
            np.random.default_rng([key, TEMPLATE_STREAM]), side, side, cfg.template_amplitude
        )
        out[:, :, 0] += template.plane
    return to_u8(out)


# ----
# Extraction

def _residual(img: RasterU8, cfg: EmbedConfig) -> npt.NDArray[np.float32]:
    planes = [img[:, :, c].astype(np.float64) for c in cfg.channel_indices]
    total = sum(p - box_blur(p, 3) for p in planes)
    return np.asarray(total, dtype=np.float32)


def _correlate_window(
    padded: npt.NDArray[np.float32], x: int, y: int, bank: PatternBank, radius: int
) -> npt.NDArray[np.float64]:
    """Normalized correlations for the sub-image at (x, y), best shift within +/-radius."""
    side = bank.side
    shifts = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    windows = np.stack(
        [padded[y + radius + dy : y + radius + dy + side, x + radius + dx : x + radius + dx + side].ravel() for dy, dx in shifts],
        axis=1,
    )
    corr = (bank.flat @ windows).astype(np.float64)
    best = int(np.argmax((corr * corr).sum(axis=0)))
    norm_e = float(np.linalg.norm(windows[:, best]))
    if norm_e == 0:
        return np.zeros(corr.shape[0])
    return corr[:, best] / (norm_e * np.sqrt(float(side * side)))


def _quadrant_origins(shape: Tuple[int, ...], cfg: EmbedConfig) -> List[Tuple[int, int]]:
    if shape[:2] == (cfg.frame_side, cfg.frame_side):
        s = cfg.sub_side
        return [(0, 0), (s, 0), (0, s), (s, s)]
    if shape[:2] == (cfg.sub_side, cfg.sub_side):
        return [(0, 0)]
    raise ShapeMismatch(
        f"expected a {cfg.frame_side}x{cfg.frame_side} frame or a {cfg.sub_side}x{cfg.sub_side} sub-image, got {shape[:2]}"
    )


def _correlations(
    img: RasterU8, origins: List[Tuple[int, int]], key: int, cfg: EmbedConfig
) -> npt.NDArray[np.float64]:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected an RGB image, got shape {img.shape}")
    bank = bank_for(key, cfg)
    radius = cfg.sync_radius
    padded = np.pad(_residual(img, cfg), radius, mode="edge")
    return np.stack([_correlate_window(padded, x, y, bank, radius) for x, y in origins])


def extract(rectified: RasterU8, key: int, cfg: EmbedConfig = EmbedConfig()) -> Tuple[BitString, RasterF]:
    """Decode a full frame (all four sub-images) or one sub-image; returns (bits, confidence per bit)."""
    rho = _correlations(rectified, _quadrant_origins(rectified.shape, cfg), key, cfg)
    total = rho.sum(axis=0)
    bits = (total > 0).astype(np.uint8)
    confidence = np.abs(total) / rho.shape[0]
    return bits, confidence


def decode_with_anticrop(
    cropped: RasterU8,
    key: int,
    cfg: EmbedConfig = EmbedConfig(),
    anticrop: Optional[AnticropConfig] = None,
) -> Tuple[BitString, CropBounds]:
    bounds = recover_subimages(cropped, cfg.sub_side, anticrop)
    if not bounds.rects:
        raise DecodeFailed("no complete sub-image inside the crop")
    rho = _correlations(cropped, [(r.x, r.y) for r in bounds.rects], key, cfg)
    weights = np.abs(rho).mean(axis=1)
    usable = weights >= cfg.confidence_floor
    if not np.any(usable):
        raise DecodeFailed(f"all {len(bounds.rects)} candidates below confidence {cfg.confidence_floor}")
    vote = (weights[usable, None] * rho[usable]).sum(axis=0)
    logger.debug("anti-crop decode", candidates=len(bounds.rects), usable=int(usable.sum()))
    return (vote > 0).astype(np.uint8), bounds
