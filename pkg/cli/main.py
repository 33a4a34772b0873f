import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import colorlog
from pydantic import ValidationError

from cli.experiments import run_ablation
from cli.pipeline import (
    CliUsageError,
    ModelQualityError,
    build_align,
    diagnose,
    eval_command,
    gen_data,
    make_context,
    train_command,
)
from config import ConfigError, get_settings, load_run_config
from diagnostics.judge import JudgeConfigError
from losses.training import TrainingError
from model.checkpoint import CheckpointError
from model.transformer import SequenceTooLongError
from storage.jsonl import TRAIN, VAL

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_QUALITY = 0, 2, 3


def _configure_logging(level: str) -> None:
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(
        "%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        log_colors={
            "DEBUG":    "cyan",
            "INFO":     "green",
            "WARNING":  "yellow",
            "ERROR":    "red",
            "CRITICAL": "red,bg_white",
        },
    ))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        handlers=[handler],
        force=True,
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise CliUsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.lr=1e-3 (repeatable)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default from LOG_LEVEL)")

    parser = _Parser(prog="rda", description="Reasoning-decision alignment on a synthetic driving world.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic world")
    p.add_argument("--out", type=Path, help="world JSONL (default paths.world)")

    p = sub.add_parser("train", parents=[common], help="train a vanilla or aligned model")
    p.add_argument("--mode", choices=("vanilla", "aligned"), required=True)
    p.add_argument("--checkpoint", type=Path, help="vanilla checkpoint to fine-tune (aligned mode)")
    p.add_argument("--out-checkpoint", type=Path)

    p = sub.add_parser("build-align", parents=[common], help="build the alignment dataset")
    p.add_argument("--checkpoint", type=Path, help="vanilla checkpoint (default paths.vanilla_checkpoint)")
    p.add_argument("--out", type=Path, help="alignment JSONL (default paths.alignment)")

    p = sub.add_parser("eval", parents=[common], help="open-loop planning metrics")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", choices=(TRAIN, VAL), default=VAL)
    p.add_argument("--report", type=Path, help="report JSON; a CSV table is written beside it")
    p.add_argument("--oracle", action="store_true", help="score the ground truth itself")

    p = sub.add_parser("diagnose", parents=[common], help="misalignment report and CoT score")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--split", choices=(TRAIN, VAL), default=VAL)
    p.add_argument("--judge", choices=("mock", "real"), help="overrides judge.kind")

    p = sub.add_parser("ablate", parents=[common], help="loss ablation over seeds")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out-dir", type=Path)
    return parser


def _run(args: argparse.Namespace) -> None:
    overrides = list(args.overrides)
    if getattr(args, "judge", None):
        overrides.append(f'judge.kind="{args.judge}"')
    cfg = load_run_config(args.config, overrides)
    ctx = make_context(cfg)
    logger.info("Running %s", args.command)

    match args.command:
        case "gen-data":
            gen_data(ctx, args.out)
        case "train":
            train_command(ctx, args.mode, args.out_checkpoint, args.checkpoint)
        case "build-align":
            build_align(ctx, args.checkpoint, args.out)
        case "eval":
            eval_command(ctx, args.split, args.checkpoint, args.report, args.oracle)
        case "diagnose":
            diagnose(ctx, args.checkpoint, args.out_dir, args.split)
        case "ablate":
            run_ablation(ctx, args.seeds, args.out_dir or cfg.paths.out_dir / "ablation")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliUsageError as exc:
        _configure_logging("INFO")
        logger.error("Usage error: %s", exc)
        return EXIT_USAGE
    _configure_logging(args.log_level or get_settings().LOG_LEVEL)

    try:
        _run(args)
    except ValidationError as exc:
        for error in exc.errors():
            logger.error("Invalid config key %s: %s", ".".join(str(p) for p in error["loc"]), error["msg"])
        return EXIT_USAGE
    except (CliUsageError, ConfigError, JudgeConfigError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except SequenceTooLongError as exc:
        logger.error("%s; raise model.max_seq_len", exc)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("File error: %s", exc)
        return EXIT_USAGE
    except (ModelQualityError, TrainingError) as exc:
        logger.error("Model quality check failed: %s", exc)
        return EXIT_QUALITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
