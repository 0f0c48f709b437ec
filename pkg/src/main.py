"""
Main entry point for the enhancement toolkit.

This module provides the ``rgt`` command line: both training stages,
enhancement, the illumination-swap study, the decomposition-strategy ablation,
the stability study and dataset evaluation.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from loguru import logger

from src.cli.commands import COMMANDS, Command, run


def setup_logging(log_level="INFO", log_dir="logs"):
    """Configure logging for the application."""
    # Clear any existing handlers
    logger.remove()

    # Add console handler
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
    )

    # Create logs directory if it doesn't exist
    logs_dir = Path(log_dir)
    logs_dir.mkdir(parents=True, exist_ok=True)

    # Add file handler for all logs
    logger.add(
        logs_dir / "rgt.log",
        level=log_level,
        rotation="10 MB",  # Rotate when the file reaches 10MB
        retention="1 week",  # Keep logs for 1 week
        compression="zip",  # Compress rotated logs
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
    )

    # Add file handler for errors only
    logger.add(
        logs_dir / "errors.log",
        level="ERROR",
        rotation="10 MB",
        retention="1 month",  # Keep error logs longer
        compression="zip",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
    )

    logger.debug("Logging configured successfully")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgt", description="Retinex-guided transformer for low-light enhancement")
    parser.add_argument(
        "--log-level",
        "-l",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default=os.getenv("RGT_LOG_LEVEL", "INFO"),
        help="Logging level"
    )
    parser.add_argument("--log-dir", default="logs", help="Directory for rotating log files")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, help="Flat key=value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override a config key (repeatable)")
    common.add_argument("--output", "-o", type=Path, help="Output directory (default: $RGT_OUTPUT_ROOT/<command>-<time>)")
    common.add_argument("--toy", type=int, default=0, metavar="N", help="Train/evaluate on N synthetic toy pairs instead of data_root")
    common.add_argument("--no-registry", action="store_true", help="Do not record runs in the SQLite registry")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "train-decomp": "Stage 1: fit the decomposer on paired images",
        "train-enhance": "Stage 2: fit the refiner with a frozen decomposer",
        "enhance": "Enhance every image of a folder",
        "swap": "Illumination-swap study of a trained decomposer",
        "ablate": "Train and swap-score several decomposition strategies",
        "stability": "Multi-seed training stability study",
        "eval": "PSNR/SSIM report on a paired dataset",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name in ("train-enhance", "enhance", "swap", "eval"):
            p.add_argument("--decomposer", type=Path, help="Decomposer checkpoint")
        if name in ("enhance", "eval"):
            p.add_argument("--refiner", type=Path, help="Refiner checkpoint")
        if name == "enhance":
            p.add_argument("--input", dest="input_dir", type=Path, required=True, help="Folder of low-light images")
        if name == "swap":
            p.add_argument("--levels", default="", help="Comma-separated level folders for the cross-level study, e.g. low,mid,high")
        if name in ("ablate", "stability"):
            p.add_argument("--strategies", default="", help="Comma-separated strategy ids")
        if name == "stability":
            p.add_argument("--runs", type=int, help="Seeds per strategy (default: stability_runs)")
    return parser


def _split(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def command_from_args(args: argparse.Namespace) -> Command:
    return Command(
        name=args.command,
        config_path=args.config,
        overrides=list(args.overrides),
        output_dir=args.output,
        decomposer=getattr(args, "decomposer", None),
        refiner=getattr(args, "refiner", None),
        input_dir=getattr(args, "input_dir", None),
        strategies=_split(getattr(args, "strategies", "")),
        runs=getattr(args, "runs", None),
        levels=_split(getattr(args, "levels", "")),
        toy_pairs=args.toy,
        registry=not args.no_registry,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for the ``rgt`` command line."""
    # Load environment variables
    load_dotenv()

    args = build_parser().parse_args(argv)

    # Set up logging
    setup_logging(args.log_level, args.log_dir)

    try:
        return run(command_from_args(args))
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except Exception as e:
        logger.critical(f"Unhandled exception: {str(e)}")
        print(f'error code=1 kind={type(e).__name__} message="{str(e)}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
