"""
Evaluation grid: embed every corpus image under every seed and embedding
variant, then decode it after each crop, channel or capture condition and
collect quality, bit error and runtime figures.
"""

import csv
import io
import statistics
import time
import tomllib
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from screenmark.channel import apply_channel
from screenmark.codec import decode_with_anticrop, embed, extract, random_payload
from screenmark.config import ChannelConfig, ScreenmarkConfig, apply_overrides, dump_config, worker_count
from screenmark.errors import ConfigError, ImageIOError, LocalizationFailed, ScreenmarkError
from screenmark.imaging import BitString, RasterU8, ber, gray_of, psnr, resize, ssim
from screenmark.jnd import flat_jnd, jnd_map
from screenmark.locate import locate_and_rectify
from screenmark.utils.synthetic import (
    EDGES,
    MAX_CROP_RATIO,
    MAX_TILT_DEG,
    Edge,
    crop_edge,
    load_corpus,
    paste_on_background,
    synthetic_corpus,
)

CSV_COLUMNS = ("image_id", "seed", "variant", "condition", "psnr", "ssim", "ber", "ber_direct", "recall", "error")
METRICS = ("psnr", "ssim", "ber", "ber_direct", "recall")
RUNTIME_STAGES = ("jnd", "embed", "channel", "locate", "extract")
RUNTIME_COLUMNS = ("image_id", "seed", "variant", "condition") + tuple(f"{s}_ms" for s in RUNTIME_STAGES)
DEFAULT_VARIANT = "default"

logger = structlog.get_logger("experiment")


class EmbedVariant(BaseModel):
    """An embedding setting the whole condition grid is repeated under."""

    model_config = ConfigDict(frozen=True)

    label: str
    overrides: Dict[str, Any] = Field(default_factory=dict, description="EmbedConfig fields")
    adaptive_jnd: bool = Field(default=True, description="False spreads the mean JND evenly over the frame")

    def resolve(self, config: ScreenmarkConfig) -> ScreenmarkConfig:
        return apply_overrides(config, {f"embed.{k}": v for k, v in self.overrides.items()})


class CropCondition(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(..., ge=0.0, le=MAX_CROP_RATIO, description="Fraction removed from one edge")
    edge: Edge = "right"

    @property
    def label(self) -> str:
        return f"crop:{self.edge}:{self.gamma:.2f}"


class ChannelCondition(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    overrides: Dict[str, Any] = Field(default_factory=dict, description="ChannelConfig fields, dotted for nesting")


class CaptureCondition(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    max_offset: float = Field(default=0.1, ge=0.0, le=0.2, description="Corner jitter as a fraction of the frame")
    canvas_scale: float = Field(default=1.5625, ge=1.0, description="Canvas side relative to the frame side")
    tilt_deg: float = Field(default=0.0, ge=-MAX_TILT_DEG, le=MAX_TILT_DEG, description="Screen turn about its vertical axis")
    overrides: Dict[str, Any] = Field(default_factory=dict)
    locate_overrides: Dict[str, Any] = Field(default_factory=dict, description="LocateConfig fields")


class ExperimentSpec(BaseModel):
    corpus_dir: Optional[Path] = Field(default=None, description="PNG directory; synthetic hosts when unset")
    n_images: int = Field(default=20, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0])
    embed_grid: List[EmbedVariant] = Field(default_factory=list)
    crop_grid: List[CropCondition] = Field(default_factory=list)
    channel_grid: List[ChannelCondition] = Field(default_factory=list)
    capture_grid: List[CaptureCondition] = Field(default_factory=list)
    output: Path = Path("report")
    workers: int = Field(default=1, ge=1)

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v: List[int]) -> List[int]:
        if not v or any(s < 0 for s in v):
            raise ValueError("seeds must be a non-empty list of nonnegative integers")
        return v

    @field_validator("embed_grid")
    @classmethod
    def _unique_variants(cls, v: List[EmbedVariant]) -> List[EmbedVariant]:
        labels = [variant.label for variant in v]
        if len(set(labels)) != len(labels):
            raise ValueError("embedding variant labels must be unique")
        return v

    @property
    def variants(self) -> List[EmbedVariant]:
        return self.embed_grid or [EmbedVariant(label=DEFAULT_VARIANT)]

    @property
    def conditions(self) -> List[str]:
        return (
            [c.label for c in self.crop_grid]
            + [f"channel:{c.label}" for c in self.channel_grid]
            + [f"capture:{c.label}" for c in self.capture_grid]
        )


class ReportRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    image_id: str
    seed: int
    variant: str = DEFAULT_VARIANT
    condition: str
    psnr: float
    ssim: float
    ber: Optional[float] = None
    ber_direct: Optional[float] = None
    recall: Optional[float] = None
    error: Optional[str] = None
    runtime_ms: Dict[str, float] = Field(default_factory=dict)

    @field_validator("runtime_ms")
    @classmethod
    def _nonnegative(cls, v: Dict[str, float]) -> Dict[str, float]:
        if any(t < 0 for t in v.values()):
            raise ValueError("runtimes must be nonnegative")
        return v


class ConditionSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    variant: str = DEFAULT_VARIANT
    condition: str
    rows: int
    failures: int
    mean: Dict[str, Optional[float]]
    median: Dict[str, Optional[float]]
    runtime_ms: Dict[str, float]


class ExperimentReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    spec: ExperimentSpec
    rows: List[ReportRow]
    summaries: List[ConditionSummary]


ZERO_CHANNEL = {
    "brightness_ramp.limit": 0.0,
    "contrast_ramp.limit": 0.0,
    "saturation_ramp.limit": 0.0,
    "noise_ramp.limit": 0.0,
    "blur.defocus_ramp.limit": 0.0,
    "moire_probability": 0.0,
    "motion_blur_probability": 0.0,
}


def default_experiment() -> ExperimentSpec:
    crops = [CropCondition(gamma=g, edge=e) for g in (0.05, 0.25, 0.40, 0.55) for e in EDGES]
    channels = [
        ChannelCondition(label="zero", overrides=ZERO_CHANNEL),
        ChannelCondition(label="photometric", overrides={"step": 1000, "moire_probability": 0.0}),
        ChannelCondition(label="full", overrides={"step": 175_000, "moire_probability": 1.0}),
        ChannelCondition(label="full-no-moire", overrides={"step": 175_000, "moire_probability": 0.0}),
    ]
    mild = {"step": 1000, "moire_probability": 0.0}
    captures = [
        CaptureCondition(label="uniform", overrides=mild),
        CaptureCondition(label="unrefined", overrides=mild, locate_overrides={"refine": False}),
        CaptureCondition(label="tilt30", max_offset=0.05, tilt_deg=30.0, overrides=mild),
    ]
    return ExperimentSpec(crop_grid=crops, channel_grid=channels, capture_grid=captures)


def load_experiment(path: Path) -> ExperimentSpec:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read experiment ({e})") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment: {e}") from e


@contextmanager
def _timed(runtimes: Dict[str, float], stage: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        runtimes[stage] = runtimes.get(stage, 0.0) + (time.perf_counter() - start) * 1000.0


def item_rng(seed: int, image_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(image_id.encode())]))


def _error_label(e: ScreenmarkError) -> str:
    if isinstance(e, LocalizationFailed):
        return f"LocalizationFailed:{e.stage}"
    return type(e).__name__


class _Item:
    """One embedded host under one seed and embedding variant, decoded under every condition."""

    def __init__(self, image_id: str, host: RasterU8, seed: int, config: ScreenmarkConfig, variant: EmbedVariant):
        self.image_id = image_id
        self.seed = seed
        self.config = config
        self.variant = variant.label
        self.rng = item_rng(seed, image_id)
        self.payload: BitString = random_payload(self.rng, config.embed.payload_bits)
        self.key = int(self.rng.integers(0, 2**63))
        self.runtimes: Dict[str, float] = {}
        with _timed(self.runtimes, "jnd"):
            jnd = jnd_map(gray_of(host), config.jnd)
            if not variant.adaptive_jnd:
                jnd = flat_jnd(jnd)
        with _timed(self.runtimes, "embed"):
            self.marked = embed(host, self.payload, self.key, jnd, config.embed)
        self.psnr = psnr(host, self.marked)
        self.ssim = ssim(host, self.marked)

    def _row(self, condition: str, runtimes: Dict[str, float], **fields: Any) -> ReportRow:
        return ReportRow(
            image_id=self.image_id,
            seed=self.seed,
            variant=self.variant,
            condition=condition,
            psnr=self.psnr,
            ssim=self.ssim,
            runtime_ms={**self.runtimes, **runtimes},
            **fields,
        )


    def _direct_ber(self, img: RasterU8) -> float:
        side = self.config.embed.frame_side
        bits, _ = extract(resize(img, side, side), self.key, self.config.embed)
        return ber(self.payload, bits)

    def crop(self, cond: CropCondition) -> ReportRow:
        runtimes: Dict[str, float] = {}
        cropped = crop_edge(self.marked, cond.gamma, cond.edge)
        fields: Dict[str, Any] = {"ber_direct": self._direct_ber(cropped)}
        try:
            with _timed(runtimes, "extract"):
                bits, _ = decode_with_anticrop(cropped, self.key, self.config.embed, self.config.anticrop)
            fields["ber"] = ber(self.payload, bits)
        except ScreenmarkError as e:
            fields["error"] = _error_label(e)
        return self._row(cond.label, runtimes, **fields)

    def _channel_config(self, overrides: Dict[str, Any]) -> ChannelConfig:
        prefixed = {f"channel.{k}": v for k, v in overrides.items()}
        prefixed["channel.seed"] = int(self.rng.integers(0, 2**32))
        return apply_overrides(self.config, prefixed).channel

    def channel(self, cond: ChannelCondition) -> ReportRow:
        runtimes: Dict[str, float] = {}
        cfg = self._channel_config(cond.overrides)
        with _timed(runtimes, "channel"):
            attacked, _ = apply_channel(self.marked, cfg, np.random.default_rng(cfg.seed))
        fields: Dict[str, Any] = {}
        try:
            with _timed(runtimes, "extract"):
                bits, _ = extract(attacked, self.key, self.config.embed)
            fields["ber"] = ber(self.payload, bits)
        except ScreenmarkError as e:
            fields["error"] = _error_label(e)
        return self._row(f"channel:{cond.label}", runtimes, **fields)

    def capture(self, cond: CaptureCondition) -> ReportRow:
        runtimes: Dict[str, float] = {}
        side = self.config.embed.frame_side
        canvas = int(round(side * cond.canvas_scale))
        capture, truth = paste_on_background(
            self.marked, self.rng, (canvas, canvas), cond.max_offset, tilt_deg=cond.tilt_deg
        )
        cfg = self._channel_config(cond.overrides)
        with _timed(runtimes, "channel"):
            attacked, _ = apply_channel(capture, cfg, np.random.default_rng(cfg.seed))
        fields: Dict[str, Any] = {"ber_direct": self._direct_ber(attacked)}
        locate_overrides = {f"locate.{k}": v for k, v in cond.locate_overrides.items()}
        locate_overrides["locate.output_side"] = side
        locate_cfg = apply_overrides(self.config, locate_overrides).locate
        try:
            with _timed(runtimes, "locate"):
                located = locate_and_rectify(attacked, locate_cfg, truth)
            fields["recall"] = located.recall_estimate
            with _timed(runtimes, "extract"):
                bits, _ = extract(located.rectified, self.key, self.config.embed)
            fields["ber"] = ber(self.payload, bits)
        except ScreenmarkError as e:
            fields["error"] = _error_label(e)
        return self._row(f"capture:{cond.label}", runtimes, **fields)


def _run_item(
    image_id: str,
    host: RasterU8,
    seed: int,
    spec: ExperimentSpec,
    variants: List[Tuple[EmbedVariant, ScreenmarkConfig]],
) -> List[ReportRow]:
    rows: List[ReportRow] = []
    for variant, config in variants:
        try:
            item = _Item(image_id, host, seed, config, variant)
        except ScreenmarkError as e:
            logger.warning("embedding failed", image_id=image_id, seed=seed, variant=variant.label, error=str(e))
            label = _error_label(e)
            rows += [
                ReportRow(
                    image_id=image_id,
                    seed=seed,
                    variant=variant.label,
                    condition=c,
                    psnr=float("nan"),
                    ssim=float("nan"),
                    error=label,
                )
                for c in spec.conditions
            ]
            continue
        rows += [item.crop(c) for c in spec.crop_grid]
        rows += [item.channel(c) for c in spec.channel_grid]
        rows += [item.capture(c) for c in spec.capture_grid]
    logger.info("image evaluated", image_id=image_id, seed=seed, rows=len(rows))
    return rows


def _stats(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    if not finite:
        return None, None
    return float(statistics.fmean(finite)), float(statistics.median(finite))


def summarize(rows: List[ReportRow]) -> List[ConditionSummary]:
    groups: Dict[Tuple[str, str], List[ReportRow]] = {}
    for row in rows:
        groups.setdefault((row.variant, row.condition), []).append(row)
    summaries: List[ConditionSummary] = []
    for (variant, condition), members in groups.items():
        mean: Dict[str, Optional[float]] = {}
        median: Dict[str, Optional[float]] = {}
        for metric in METRICS:
            mean[metric], median[metric] = _stats([getattr(r, metric) for r in members])
        stages = sorted({s for r in members for s in r.runtime_ms})
        runtime = {s: float(statistics.fmean(r.runtime_ms.get(s, 0.0) for r in members)) for s in stages}
        summaries.append(
            ConditionSummary(
                variant=variant,
                condition=condition,
                rows=len(members),
                failures=sum(1 for r in members if r.error is not None),
                mean=mean,
                median=median,
                runtime_ms=runtime,
            )
        )
    return summaries


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if value == float("inf") else f"{value:.6f}"
    return str(value)


def rows_to_csv(rows: List[ReportRow]) -> str:
    """Metric rows only; reruns with equal seeds give identical bytes."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, column)) for column in CSV_COLUMNS])
    return buffer.getvalue()


def runtimes_to_csv(rows: List[ReportRow]) -> str:
    """Per-stage wall-clock milliseconds, one line per report row; stages a row did not run stay empty."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RUNTIME_COLUMNS)
    for row in rows:
        stages = [_fmt(row.runtime_ms.get(stage)) for stage in RUNTIME_STAGES]
        writer.writerow([row.image_id, row.seed, row.variant, row.condition, *stages])
    return buffer.getvalue()


def run_evaluation(spec: ExperimentSpec, config: ScreenmarkConfig = ScreenmarkConfig()) -> ExperimentReport:
    variants = [(variant, variant.resolve(config)) for variant in spec.variants]
    side = config.embed.frame_side
    if any(resolved.embed.frame_side != side for _, resolved in variants):
        raise ConfigError("embedding variants must keep the frame side")
    if spec.corpus_dir is not None:
        corpus = load_corpus(spec.corpus_dir, spec.n_images, side)
        if not corpus:
            raise ConfigError(f"{spec.corpus_dir}: corpus is empty")
    else:
        corpus = synthetic_corpus(spec.n_images, seed=0, side=side)

    jobs = [(image_id, host, seed) for image_id, host in corpus for seed in spec.seeds]
    workers = worker_count(spec.workers)
    logger.info(
        "evaluation started",
        images=len(corpus),
        seeds=len(spec.seeds),
        variants=len(variants),
        conditions=len(spec.conditions),
        workers=workers,
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda job: _run_item(*job, spec, variants), jobs))
    rows = [row for batch in results for row in batch]
    return ExperimentReport(spec=spec, rows=rows, summaries=summarize(rows))


def write_report(report: ExperimentReport, config: ScreenmarkConfig, output: Path) -> Dict[str, Path]:
    """Write report.csv, runtime.csv, report.json and the resolved config.toml into ``output``."""
    paths = {
        "csv": output / "report.csv",
        "runtime": output / "runtime.csv",
        "json": output / "report.json",
        "config": output / "config.toml",
    }
    try:
        output.mkdir(parents=True, exist_ok=True)
        paths["csv"].write_text(rows_to_csv(report.rows))
        paths["runtime"].write_text(runtimes_to_csv(report.rows))
        paths["json"].write_text(report.model_dump_json(indent=2))
    except OSError as e:
        raise ImageIOError(f"{output}: cannot write report ({e})") from e
    dump_config(config, paths["config"])
    return paths
