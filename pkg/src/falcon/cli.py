"""Command-line surface tying the pipeline together.

Subcommands: ``plan-crop``, ``encode``, ``attn-map``, ``compare``,
``selftest``. Reports are JSON on stdout (schemas under docs/schemas/),
tensors go to FALT archives, heatmaps to binary PGM. Every command is
deterministic given (inputs, seed, flags); repeated runs produce
byte-identical artifacts.

Exit codes: 0 success, 1 selftest failure, 2 input error, 3 config/weight
error, 4 bad indices.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import compressors, encoder, falt, image_crop, oracle
from .errors import (
    ArchiveError,
    BoundsError,
    ConfigError,
    FalconError,
    ImageError,
)
from .numerics import SplitMix64

EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INDEX = 4

# Projector weights draw from their own stream so the encoder stream stays
# stable whether or not projection is requested.
_PROJECTOR_SEED_OFFSET = 1


@dataclass
class RunConfig:
    """Resolved run options: defaults < config file < CLI flags < FALCON_SEED."""

    preset: str = "paper"
    seed: int = 0
    layers: int | None = None
    width: int | None = None
    heads: int | None = None
    patch: int | None = None
    tile: int | None = None
    registers: int | None = None
    max_tiles: int | None = None
    thumbnail: bool = True
    reatten: bool = True
    verify_mode: bool = False
    threads: int = 1
    project: bool = False
    d_llm: int = 128
    out: str | None = None


_RC_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_BOOL_FIELDS = {"thumbnail", "reatten", "verify_mode", "project"}


def resolve_run_config(args, command_defaults: dict | None = None) -> RunConfig:
    rc = RunConfig()
    for key, value in (command_defaults or {}).items():
        setattr(rc, key, value)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                file_cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path!r}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in _RC_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            if key in _BOOL_FIELDS and not isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be a boolean")
            setattr(rc, key, value)
    for key in _RC_FIELDS:
        value = getattr(args, key, None)
        if value is None:
            continue
        if key in _BOOL_FIELDS and isinstance(value, str):
            value = value == "on"
        setattr(rc, key, value)
    env_seed = os.environ.get("FALCON_SEED")
    if env_seed is not None:
        try:
            rc.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"FALCON_SEED must be an integer, got {env_seed!r}") from exc
    if rc.preset not in encoder.PRESETS:
        raise ConfigError(f"unknown preset {rc.preset!r}")
    if rc.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {rc.threads}")
    return rc


def encoder_config(rc: RunConfig) -> encoder.EncoderConfig:
    return encoder.config_with_overrides(
        encoder.PRESETS[rc.preset],
        layers=rc.layers,
        width=rc.width,
        heads=rc.heads,
        patch=rc.patch,
        tile=rc.tile,
        registers=rc.registers,
        max_tiles=rc.max_tiles,
        reatten_enabled=rc.reatten,
    )


def _working_dtype(rc: RunConfig):
    return np.float64 if rc.verify_mode else np.float32


def _load_image(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise ImageError(f"cannot read image {path!r}: {exc}") from exc
    return image_crop.load_ppm(data)


def _get_weights(rc: RunConfig, cfg: encoder.EncoderConfig, weights_path: str | None):
    if weights_path:
        return encoder.load_weights(weights_path, cfg)
    return encoder.init_weights(cfg, rc.seed, _working_dtype(rc))


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_plan_crop(rc: RunConfig, args) -> int:
    cfg = encoder_config(rc)
    img = _load_image(args.image)
    h, w = img.shape[:2]
    plan = image_crop.plan_crop(h, w, cfg.tile, cfg.max_tiles)
    _emit(
        {
            "h": h,
            "w": w,
            "rows": plan.rows,
            "cols": plan.cols,
            "n_tiles": plan.n_tiles,
            "resize_h": plan.resize_h,
            "resize_w": plan.resize_w,
        }
    )
    return EXIT_OK


def cmd_encode(rc: RunConfig, args) -> int:
    cfg = encoder_config(rc)
    img = _load_image(args.image)
    h, w = img.shape[:2]
    plan = image_crop.plan_crop(h, w, cfg.tile, cfg.max_tiles)
    n_states = plan.n_tiles + (1 if rc.thumbnail else 0)
    report = oracle.count_flops(
        cfg, plan.n_tiles, thumbnail=rc.thumbnail, d_llm=rc.d_llm if rc.project else None
    )
    summary = {
        "n_tiles": plan.n_tiles,
        "tokens_out": cfg.registers * n_states,
        "compression_ratio": cfg.compression_ratio,
        "flops": report.as_dict(),
        "dry_run": bool(args.dry_run),
        "out": None,
    }
    if not args.dry_run:
        weights = _get_weights(rc, cfg, args.weights)
        tiles = image_crop.crop_tiles(image_crop.to_float(img), plan)
        f_hr, _ = encoder.encode(
            tiles, weights, cfg, thumbnail=rc.thumbnail, threads=rc.threads
        )
        entries = {"f_hr": f_hr}
        if rc.project:
            pw = compressors.init_projector(
                cfg.width, rc.d_llm, SplitMix64(rc.seed + _PROJECTOR_SEED_OFFSET), f_hr.dtype
            )
            entries["projected"] = compressors.mlp_project(f_hr, pw)
        out = rc.out or "f_hr.falt"
        falt.save(out, entries)
        summary["tokens_out"] = int(f_hr.shape[0])
        summary["out"] = out
    _emit(summary)
    return EXIT_OK


def cmd_attn_map(rc: RunConfig, args) -> int:
    cfg = encoder_config(rc)
    if not 0 <= args.layer < cfg.layers:
        raise BoundsError(f"layer {args.layer} out of range [0, {cfg.layers})")
    if not 0 <= args.head < cfg.heads:
        raise BoundsError(f"head {args.head} out of range [0, {cfg.heads})")
    if not 0 <= args.register < cfg.registers:
        raise BoundsError(f"register {args.register} out of range [0, {cfg.registers})")
    img = _load_image(args.image)
    h, w = img.shape[:2]
    plan = image_crop.plan_crop(h, w, cfg.tile, cfg.max_tiles)
    weights = _get_weights(rc, cfg, args.weights)
    tiles = image_crop.crop_tiles(image_crop.to_float(img), plan)
    _, trace = encoder.encode(
        tiles,
        weights,
        cfg,
        thumbnail=rc.thumbnail,
        threads=rc.threads,
        record_trace=True,
        trace_layers={args.layer},
        trace_heads={args.head},
    )
    heat = encoder.extract_register_attention(trace, args.layer, args.head, args.register, plan)
    out = rc.out or "heatmap.pgm"
    with open(out, "wb") as f:
        f.write(image_crop.write_pgm(image_crop.heatmap_to_u8(heat)))
    _emit(
        {
            "out": out,
            "height": int(heat.shape[0]),
            "width": int(heat.shape[1]),
            "layer": args.layer,
            "head": args.head,
            "register": args.register,
        }
    )
    return EXIT_OK


def cmd_compare(rc: RunConfig, args) -> int:
    cfg = encoder_config(rc)
    rows = [
        compressors.comparison_row(
            kind, cfg, n_tiles=cfg.max_tiles, thumbnail=rc.thumbnail
        )
        for kind in compressors.COMPRESSOR_KINDS
    ]
    _emit(
        {
            "config": {
                "width": cfg.width,
                "layers": cfg.layers,
                "image_tokens_per_tile": cfg.n_image_tokens,
                "n_tiles": cfg.max_tiles,
                "thumbnail": rc.thumbnail,
            },
            "compressors": rows,
        }
    )
    return EXIT_OK


def cmd_selftest(rc: RunConfig, args) -> int:
    cfg = encoder_config(rc)
    weights = None
    if args.weights:
        weights = encoder.load_weights(args.weights, cfg)
    result = oracle.run_selftest(cfg, seed=rc.seed, verify_mode=rc.verify_mode, weights=weights)
    _emit(result)
    return EXIT_OK if result["passed"] else EXIT_SELFTEST_FAILED


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring the run configuration")
    p.add_argument("--preset", choices=sorted(encoder.PRESETS))
    p.add_argument("--seed", type=int, help="PRNG seed (FALCON_SEED overrides)")
    p.add_argument("--layers", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--tile", type=int, help="square tile side in pixels (default 384)")
    p.add_argument("--registers", type=int)
    p.add_argument("--max-tiles", type=int, dest="max_tiles", help="tile cap (default 16)")
    p.add_argument("--thumbnail", choices=["on", "off"])
    p.add_argument("--reatten", choices=["on", "off"])
    p.add_argument("--verify-mode", choices=["on", "off"], dest="verify_mode")
    p.add_argument("--threads", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="falcon", description="Register-based visual encoder toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan-crop", help="report the shape-adaptive crop grid")
    p.add_argument("image", help="binary PPM (P6) image")
    _add_common(p)
    p.set_defaults(func=cmd_plan_crop, defaults={})

    p = sub.add_parser("encode", help="encode an image to register tokens")
    p.add_argument("image", help="binary PPM (P6) image")
    p.add_argument("--weights", help="FALT archive to load weights from")
    p.add_argument(
        "--project",
        action="store_const",
        const=True,
        default=None,
        help="also emit projected tokens",
    )
    p.add_argument("--d-llm", type=int, dest="d_llm", help="projector output width")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="report token/FLOP accounting without running the forward",
    )
    _add_common(p)
    p.set_defaults(func=cmd_encode, defaults={})

    p = sub.add_parser("attn-map", help="export a register-to-image attention heatmap")
    p.add_argument("image", help="binary PPM (P6) image")
    p.add_argument("--weights", help="FALT archive to load weights from")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--head", type=int, required=True)
    p.add_argument("--register", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_attn_map, defaults={})

    p = sub.add_parser("compare", help="token/parameter/FLOP table per compressor")
    _add_common(p)
    p.set_defaults(func=cmd_compare, defaults={})

    p = sub.add_parser("selftest", help="run the oracle, gradient, and invariant suite")
    p.add_argument("--weights", help="FALT archive to validate and test against")
    _add_common(p)
    p.set_defaults(func=cmd_selftest, defaults={"preset": "tiny", "verify_mode": True})

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = resolve_run_config(args, args.defaults)
        return args.func(rc, args)
    except ImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INDEX
    except (ArchiveError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FalconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
