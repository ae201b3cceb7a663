#!/usr/bin/env python3
# meel/cli.py
"""
Command-line entry point.

    meel generate --config CFG --out-dir DIR
    meel train    --config CFG [--data MANIFEST] --out CKPT [--log LOG] [--resume CKPT]
                  [--no-infonce] [--no-center] [--no-momentum] [overrides...]
    meel eval     --checkpoint CKPT --data MANIFEST [--encoder momentum|query] [--split S]

Exit codes: 0 success, 1 I/O or runtime failure, 2 configuration or dimension
mismatch. Human-readable messages go to stderr, JSON results to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    CliConfigFile,
    ManifestRef,
    SynthConfig,
    TrainConfig,
    config_error_from,
    settings,
)
from .data.dataset import SPLITS, Dataset, export_dataset, load_dataset
from .data.synthetic import generate_synthetic
from .errors import ConfigError, MeelError, ShapeMismatchError
from .evaluation import evaluate
from .trainer import fit
from .utils.logs import JsonlSink, setup_logging

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _info(msg: str) -> None:
    print(f"[INFO] {msg}", file=sys.stderr)


def _emit_json(doc: Any) -> None:
    print(json.dumps(doc, indent=2))


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------
def read_config_file(path: str | None) -> CliConfigFile:
    if path is None:
        return CliConfigFile()
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path} is not valid JSON ({e.msg}, line {e.lineno})") from e
    try:
        return CliConfigFile.model_validate(raw)
    except ValidationError as e:
        raise config_error_from(e) from e


def resolve_train_config(base: TrainConfig, args: argparse.Namespace) -> TrainConfig:
    """Flags override file values."""
    updates: dict[str, Any] = {}
    for name in ("epochs", "seed", "batch_size", "queue_size", "eval_encoder", "learning_rate"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "no_infonce", False):
        updates["use_infonce"] = False
    if getattr(args, "no_center", False):
        updates["use_center"] = False
    if getattr(args, "no_momentum", False):
        updates["use_momentum"] = False
    try:
        return TrainConfig.model_validate({**base.model_dump(), **updates})
    except ValidationError as e:
        raise config_error_from(e, "train") from e


def _load_data(cfg: CliConfigFile, manifest: str | None) -> tuple[Dataset, dict[str, Any]]:
    if manifest is not None:
        return load_dataset(manifest), {"manifest": str(manifest)}
    if isinstance(cfg.data, ManifestRef):
        return load_dataset(cfg.data.manifest), {"manifest": cfg.data.manifest}
    _info("no manifest given; generating the synthetic dataset in memory")
    data_cfg = cfg.data
    if data_cfg.seed is None:
        _info(f"data.seed not set; using default seed {data_cfg.resolved_seed()}")
    return generate_synthetic(data_cfg), {"synthetic": data_cfg.model_dump(mode="json")}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_generate(args: argparse.Namespace) -> int:
    cfg = read_config_file(args.config)
    if not isinstance(cfg.data, SynthConfig):
        raise ConfigError("data", "generate needs a synthetic data section, not a manifest")
    data_cfg = cfg.data
    if args.seed is not None:
        data_cfg = data_cfg.model_copy(update={"seed": args.seed})
    if data_cfg.seed is None:
        _info(
            f"data.seed not set; using default seed {data_cfg.resolved_seed()} "
            "(MEEL_DEFAULT_SEED)"
        )

    dataset = generate_synthetic(data_cfg)
    out_dir = Path(args.out_dir or settings.DATA_DIR)
    manifest = export_dataset(dataset, out_dir)
    counts = {s: int(dataset.splits[s].size) for s in SPLITS}
    _info(
        f"wrote {dataset.n_videos} videos / {dataset.n_captions} captions to {out_dir} "
        f"(train={counts['train']} val={counts['val']} test={counts['test']})"
    )
    _emit_json(
        {
            "manifest": str(manifest),
            "n_videos": dataset.n_videos,
            "n_captions": dataset.n_captions,
            "splits": counts,
            "seed": data_cfg.resolved_seed(),
        }
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = read_config_file(args.config)
    dataset, data_echo = _load_data(cfg, args.data)

    state = None
    if args.resume:
        state = load_checkpoint(args.resume)
        # the checkpoint's config wins; only the epoch budget may be extended
        base = state.config
        if args.epochs is not None:
            base = resolve_train_config(base, argparse.Namespace(epochs=args.epochs))
        train_cfg = base
        state.config = train_cfg
        _info(f"resuming from {args.resume} at epoch {state.epoch}, step {state.step}")
    else:
        train_cfg = resolve_train_config(cfg.train, args)

    if state is None and train_cfg.batch_size > dataset.split_videos("train").size:
        raise ConfigError(
            "train.batch_size",
            f"{train_cfg.batch_size} exceeds the {dataset.split_videos('train').size} "
            "training videos",
        )
    if state is not None:
        _check_dims(dataset, state.video_encoder.input_dim, state.text_encoder.input_dim)

    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".jsonl")
    with JsonlSink(log_path) as sink:
        sink.write(
            {
                "event": "config",
                "version": __version__,
                "data": data_echo,
                "train": train_cfg.model_dump(mode="json"),
                "resume": args.resume,
            }
        )
        result = fit(dataset, train_cfg, state=state, sink=sink)

    save_checkpoint(result.state, args.out)
    _info(f"best epoch {result.best_epoch}; checkpoint -> {args.out}; log -> {log_path}")
    report = result.best_report
    if report is None and result.best_epoch and dataset.split_videos("val").size:
        # best epoch ran before this resume
        report = evaluate(result.state, dataset, "val", train_cfg.eval_encoder)
    _emit_json(report.to_dict() if report is not None else None)
    return EXIT_OK


def _check_dims(dataset: Dataset, video_dim: int | None, text_dim: int | None) -> None:
    for name, expected, actual in (
        ("video", video_dim, dataset.video_dim),
        ("text", text_dim, dataset.text_dim),
    ):
        if expected is not None and expected != actual:
            raise ShapeMismatchError(
                f"{name} feature dimension: checkpoint expects {expected}, dataset has {actual}"
            )


def cmd_eval(args: argparse.Namespace) -> int:
    eval_cfg = read_config_file(args.config).eval
    state = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_dims(dataset, state.video_encoder.input_dim, state.text_encoder.input_dim)
    # flags win over the config file's eval section
    split = args.split or eval_cfg.split
    encoder = args.encoder or eval_cfg.encoder
    report = evaluate(state, dataset, split, encoder)
    _info(f"split={split} encoder={encoder} rsum={report.rsum:.2f}")
    _emit_json(report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meel", description="Memory-enhanced video-text embedding learning"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default=None, help="Override MEEL_LOG_LEVEL (DEBUG, INFO, WARNING...)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Write a synthetic dataset (features + manifest)")
    gen.add_argument("--config", default=None, help="JSON config file (data section used)")
    gen.add_argument("--out-dir", default=None, help="Output directory. Default: MEEL_DATA_DIR")
    gen.add_argument("--seed", type=int, default=None, help="Override data.seed")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="Train and write the best checkpoint")
    tr.add_argument("--config", default=None, help="JSON config file")
    tr.add_argument("--data", default=None, help="Dataset manifest (overrides config data)")
    tr.add_argument("--out", required=True, help="Checkpoint path for the best state")
    tr.add_argument("--log", default=None, help="JSONL log path. Default: <out>.jsonl")
    tr.add_argument("--resume", default=None, help="Continue from this checkpoint")
    tr.add_argument("--no-infonce", action="store_true", help="Disable the memory InfoNCE losses")
    tr.add_argument("--no-center", action="store_true", help="Disable the text center loss")
    tr.add_argument(
        "--no-momentum",
        action="store_true",
        help="Copy query weights into the momentum encoders every step instead of EMA",
    )
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    tr.add_argument("--queue-size", dest="queue_size", type=int, default=None)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    tr.add_argument(
        "--eval-encoder", dest="eval_encoder", choices=("momentum", "query"), default=None
    )
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="Score a checkpoint on one split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="Dataset manifest")
    ev.add_argument("--config", default=None, help="JSON config file (eval section used)")
    ev.add_argument(
        "--encoder", choices=("momentum", "query"), default=None, help="Default: eval.encoder"
    )
    ev.add_argument("--split", choices=SPLITS, default=None, help="Default: eval.split")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        return args.func(args)
    except (ConfigError, ShapeMismatchError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeelError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
