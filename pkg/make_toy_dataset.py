#!/usr/bin/env python3
"""
Write the synthetic paired toy set to disk.

Random textures are lit by random smooth illumination fields; one folder per
brightness level (``low/``, ``high/`` and optionally ``mid/``), matching file
names across folders. Point ``data_root`` at the output directory.
"""

import argparse
import sys

from loguru import logger

from src.dataset.synthetic import LEVELS, write_toy_dataset


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate the synthetic low/normal toy dataset")
    parser.add_argument("root", help="Output directory")
    parser.add_argument("--count", "-n", type=int, default=20, help="Number of scenes")
    parser.add_argument("--size", type=int, default=32, help="Image side in pixels")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--levels", default="low,high", help=f"Comma-separated levels out of {', '.join(LEVELS)}")
    args = parser.parse_args(argv)

    levels = [part.strip() for part in args.levels.split(",") if part.strip()]
    try:
        write_toy_dataset(args.root, n=args.count, size=args.size, seed=args.seed, levels=levels)
    except (OSError, ValueError) as e:
        logger.error(f"Could not write toy dataset: {str(e)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
