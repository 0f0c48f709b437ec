"""
Synthetic paired toy set: random textures lit by random smooth illumination.

Each scene has one reflectance map; every brightness level multiplies it by
its own smooth gray illumination field. Darker levels receive a little
Gaussian noise, as real low-light captures do.
"""

from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger

from .pairs import LoadedPair, save_image

# level name -> illumination range and noise sigma
LEVELS: Dict[str, Tuple[float, float, float]] = {
    "low": (0.05, 0.3, 0.01),
    "mid": (0.3, 0.6, 0.005),
    "high": (0.7, 1.0, 0.0),
}


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    out = np.empty((3, size, size))
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(3):
            fx, fy = rng.uniform(1.0, 6.0, size=2)
            acc += np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
        block = max(1, size // 8)
        cells = rng.uniform(-1.0, 1.0, size=(-(-size // block),) * 2)
        acc += np.kron(cells, np.ones((block, block)))[:size, :size]
        lo, hi = acc.min(), acc.max()
        out[c] = 0.1 + 0.85 * (acc - lo) / max(hi - lo, 1e-8)
    return out


def _smooth_field(rng: np.random.Generator, size: int, lo: float, hi: float) -> np.ndarray:
    grid = torch.from_numpy(rng.uniform(0.0, 1.0, size=(1, 1, 4, 4)))
    field = F.interpolate(grid, size=(size, size), mode="bilinear", align_corners=True)[0].numpy()
    return lo + (hi - lo) * field


def make_toy_scenes(n: int, size: int, seed: int, levels: Sequence[str] = ("low", "high")) -> List[Dict[str, torch.Tensor]]:
    """``n`` scenes, each a dict level name -> ``(3, size, size)`` image."""
    unknown = [name for name in levels if name not in LEVELS]
    if unknown:
        raise ValueError(f"unknown brightness levels: {', '.join(unknown)}")
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n):
        reflectance = _texture(rng, size)
        scene = {}
        for name in levels:
            lo, hi, sigma = LEVELS[name]
            img = reflectance * _smooth_field(rng, size, lo, hi)
            if sigma > 0:
                img = img + rng.normal(0.0, sigma, size=img.shape)
            scene[name] = torch.from_numpy(np.clip(img, 0.0, 1.0)).to(torch.float32)
        scenes.append(scene)
    return scenes


def make_toy_pairs(n: int = 20, size: int = 32, seed: int = 0) -> List[LoadedPair]:
    """In-memory low/normal pairs with scene ids ``toy000``, ``toy001``, ..."""
    scenes = make_toy_scenes(n, size, seed)
    return [LoadedPair(s["low"], s["high"], f"toy{i:03d}") for i, s in enumerate(scenes)]


def write_toy_dataset(
    root: Union[str, Path],
    n: int = 20,
    size: int = 32,
    seed: int = 0,
    levels: Sequence[str] = ("low", "high"),
) -> Path:
    """Write the toy set as PNGs in one folder per level."""
    root = Path(root)
    for i, scene in enumerate(make_toy_scenes(n, size, seed, levels)):
        for name, img in scene.items():
            save_image(img, root / name / f"toy{i:03d}.png")
    logger.info(f"Wrote {n} toy scenes ({', '.join(levels)}) to {root}")
    return root
