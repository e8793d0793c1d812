"""
Command-line harness.

Results go to stdout as JSON, logs go to stderr. Exit codes: 0 success,
1 usage or processing error, 2 localization failure, 3 I/O error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import structlog
from pydantic import ValidationError

from screenmark.anticrop import recover_subimages
from screenmark.channel import DistortionTrace, apply_channel, replay_trace
from screenmark.codec import (
    decode_with_anticrop,
    embed,
    extract,
    key_from_hex,
    payload_from_bitfile,
    payload_from_hex,
    payload_to_hex,
    random_payload,
)
from screenmark.config import ScreenmarkConfig, apply_overrides, load_config
from screenmark.errors import ConfigError, ImageIOError, ScreenmarkError
from screenmark.experiment import ExperimentSpec, default_experiment, load_experiment, run_evaluation, write_report
from screenmark.geometry import Quad
from screenmark.imaging import RasterU8, ber, gray_of, quality_report, read_png, write_png
from screenmark.jnd import jnd_map, normalized_preview, write_jnd_sidecar
from screenmark.locate import locate_and_rectify
from screenmark.log import configure_logging

logger = structlog.get_logger("cli")


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True, allow_nan=True))


def _rgb(path: str) -> RasterU8:
    img = read_png(path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read ({e})") from e


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise ImageIOError(f"{path}: cannot write ({e})") from e


# ----
# Subcommands

def cmd_embed(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    host = _rgb(args.host)
    key = key_from_hex(args.key)
    if args.payload is not None:
        payload = payload_from_hex(args.payload, config.embed.payload_bits)
    elif args.payload_file is not None:
        payload = payload_from_bitfile(args.payload_file, config.embed.payload_bits)
    else:
        payload = random_payload(np.random.default_rng(args.seed), config.embed.payload_bits)

    jnd = jnd_map(gray_of(host), config.jnd)
    marked = embed(host, payload, key, jnd, config.embed)
    write_png(args.output, marked)
    report = quality_report(host, marked)
    logger.info("embedded", output=args.output, psnr=report.psnr, ssim=report.ssim)
    _emit({"output": args.output, "payload": payload_to_hex(payload), **json.loads(report.model_dump_json())})
    return 0


def cmd_attack(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    img = _rgb(args.input)
    if args.replay is not None:
        try:
            trace = DistortionTrace.model_validate_json(_read_text(Path(args.replay)))
        except ValidationError as e:
            raise ConfigError(f"{args.replay}: invalid trace ({e})") from e
        attacked = replay_trace(img, trace)
    else:
        cfg = config.channel
        attacked, trace = apply_channel(img, cfg, np.random.default_rng(cfg.seed))
    write_png(args.output, attacked)
    trace_path = Path(args.trace) if args.trace else Path(args.output).with_suffix(".trace.json")
    _write_text(trace_path, trace.model_dump_json(indent=2))
    _emit({"output": args.output, "trace": str(trace_path), "stages": [s.stage for s in trace.stages]})
    return 0


def cmd_locate(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    captured = _rgb(args.capture)
    truth = None
    if args.truth is not None:
        truth = Quad.model_validate_json(_read_text(Path(args.truth)))
    result = locate_and_rectify(captured, config.locate, truth)
    write_png(args.output, result.rectified)
    quad_path = Path(args.quad) if args.quad else Path(args.output).with_suffix(".quad.json")
    _write_text(quad_path, result.quad.model_dump_json(indent=2))
    _emit({"output": args.output, "quad": [list(c) for c in result.quad.corners], "recall": result.recall_estimate})
    return 0


def cmd_extract(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    img = _rgb(args.image)
    key = key_from_hex(args.key)
    out: Dict[str, Any] = {}
    if args.anticrop:
        bits, bounds = decode_with_anticrop(img, key, config.embed, config.anticrop)
        out["subimages"] = [r.model_dump() for r in bounds.rects]
    else:
        bits, confidence = extract(img, key, config.embed)
        out["confidence"] = float(np.mean(confidence))
    out["payload"] = payload_to_hex(bits)
    if args.truth is not None:
        out["ber"] = ber(payload_from_hex(args.truth, config.embed.payload_bits), bits)
    _emit(out)
    return 0


def cmd_recover(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    bounds = recover_subimages(_rgb(args.image), config.embed.sub_side, config.anticrop)
    _emit(json.loads(bounds.model_dump_json()))
    return 0


def cmd_jnd_map(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    jnd = jnd_map(gray_of(read_png(args.image)), config.jnd)
    write_png(args.output, normalized_preview(jnd))
    sidecar = Path(args.sidecar) if args.sidecar else Path(args.output).with_suffix(".jndf")
    write_jnd_sidecar(sidecar, jnd)
    _emit({"output": args.output, "sidecar": str(sidecar), "min": float(jnd.plane.min()), "max": float(jnd.plane.max())})
    return 0


def cmd_evaluate(args: argparse.Namespace, config: ScreenmarkConfig) -> int:
    spec = load_experiment(Path(args.spec)) if args.spec else default_experiment()
    update: Dict[str, Any] = {}
    if args.corpus is not None:
        update["corpus_dir"] = Path(args.corpus)
    if args.images is not None:
        update["n_images"] = args.images
    if args.seeds:
        update["seeds"] = args.seeds
    if args.out is not None:
        update["output"] = Path(args.out)
    if args.workers is not None:
        update["workers"] = args.workers
    try:
        spec = ExperimentSpec.model_validate({**spec.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"invalid experiment: {e}") from e

    report = run_evaluation(spec, config)
    paths = write_report(report, config, spec.output)
    failures = sum(s.failures for s in report.summaries)
    _emit({"rows": len(report.rows), "failures": failures, **{k: str(v) for k, v in paths.items()}})
    return 0


# ----
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="screenmark", description="Screen-shooting watermark toolkit")
    parser.add_argument("--config", help="TOML configuration file (default ./config.toml when present)")
    parser.add_argument("--log-level", help="Log level, overrides [logging].level")
    parser.add_argument("--json-logs", action="store_true", help="Render logs as JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="Embed a payload into a 512x512 host")
    p.add_argument("host")
    p.add_argument("output")
    p.add_argument("--key", required=True, help="64-bit key as hex")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--payload", help="32 hex characters, top bit 0")
    group.add_argument("--payload-file", help="Text file of 127 '0'/'1' characters")
    p.add_argument("--seed", type=int, default=0, help="Seed for a random payload when none is given")
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("attack", help="Apply the simulated screen-camera channel")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--trace", help="Where to write the distortion trace")
    p.add_argument("--replay", help="Replay a saved trace instead of sampling")
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("locate", help="Find and rectify the displayed image in a capture")
    p.add_argument("capture")
    p.add_argument("output")
    p.add_argument("--quad", help="Where to write the detected corners")
    p.add_argument("--truth", help="JSON quad of the true corners, enables recall")
    p.add_argument("--no-refine", action="store_true", help="Skip mask refinement")
    p.set_defaults(handler=cmd_locate)

    p = sub.add_parser("extract", help="Decode the payload")
    p.add_argument("image")
    p.add_argument("--key", required=True)
    p.add_argument("--anticrop", action="store_true", help="Input is a crop; locate sub-images by symmetry")
    p.add_argument("--truth", help="Expected payload hex, enables BER")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("recover", help="Report the sub-image grid inside a crop")
    p.add_argument("image")
    p.set_defaults(handler=cmd_recover)

    p = sub.add_parser("jnd-map", help="Write a JND preview PNG and float sidecar")
    p.add_argument("image")
    p.add_argument("output")
    p.add_argument("--sidecar")
    p.set_defaults(handler=cmd_jnd_map)

    p = sub.add_parser(
        "evaluate",
        help="Run an evaluation grid",
        description="Writes report.csv (metrics, byte-identical across reruns), runtime.csv "
        "(per-stage milliseconds), report.json and the resolved config.toml.",
    )
    p.add_argument("--spec", help="Experiment TOML; the default grid otherwise")
    p.add_argument("--corpus")
    p.add_argument("--images", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_evaluate)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {"logging.level": args.log_level}
    if args.json_logs:
        overrides["logging.json_output"] = True
    if args.command == "attack":
        overrides["channel.seed"] = args.seed
        overrides["channel.step"] = args.step
    if args.command == "locate" and args.no_refine:
        overrides["locate.refine"] = False
    return overrides


def _fail(e: Exception, code: int) -> int:
    _emit({"error": type(e).__name__, "message": str(e)})
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1

    try:
        config = apply_overrides(load_config(args.config), _overrides(args))
    except ScreenmarkError as e:
        configure_logging()
        logger.error("configuration failed", error=str(e))
        return _fail(e, e.exit_code)
    configure_logging(config.logging.level, config.logging.json_output)

    handler: Callable[[argparse.Namespace, ScreenmarkConfig], int] = args.handler
    try:
        return handler(args, config)
    except ScreenmarkError as e:
        logger.error("command failed", command=args.command, error=type(e).__name__, message=str(e))
        return _fail(e, e.exit_code)
    except Exception as e:
        logger.exception("unexpected failure", command=args.command)
        return _fail(e, 1)


if __name__ == "__main__":
    sys.exit(main())
