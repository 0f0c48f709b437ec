"""
Illumination-swap protocol for judging a decomposition.

Both images of a pair are decomposed, the four (R, L) combinations are
reconstructed, and every reconstruction is scored in the pixel domain
against the input image whose L it used.
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import torch
from loguru import logger

from src.dataset.pairs import LoadedPair
from src.decomposer.network import Decomposer
from src.decomposer.strategy import LatentComponents

from .metrics import psnr

COMBINATIONS = ("ll", "ln", "nl", "nn")
SWAP_COLUMNS = ("psnr_ll", "psnr_ln", "psnr_nl", "psnr_nn")


@dataclass
class SwapResult:
    """PSNRs of f_rec(R_a, L_b) for a, b in {l, n}; ``targets`` names the image each was scored against."""

    psnr_ll: float
    psnr_ln: float
    psnr_nl: float
    psnr_nn: float
    targets: Dict[str, str] = field(default_factory=lambda: {"ll": "low", "ln": "normal", "nl": "low", "nn": "normal"})

    @property
    def mean(self) -> float:
        return (self.psnr_ll + self.psnr_ln + self.psnr_nl + self.psnr_nn) / 4.0

    def as_row(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in SWAP_COLUMNS}


def _batched(img: torch.Tensor) -> torch.Tensor:
    return img.unsqueeze(0) if img.dim() == 3 else img


@torch.no_grad()
def swap_protocol(low: torch.Tensor, normal: torch.Tensor, decomposer: Decomposer) -> SwapResult:
    """Run the swap protocol on one low/normal pixel pair."""
    low, normal = _batched(low), _batched(normal)
    parts = {"l": decomposer.decompose(*decomposer.prepare(low)), "n": decomposer.decompose(*decomposer.prepare(normal))}
    images = {"l": low, "n": normal}
    names = {"l": "low", "n": "normal"}

    scores, targets = {}, {}
    for combo in COMBINATIONS:
        r_from, l_from = combo[0], combo[1]
        mixed = LatentComponents(parts[r_from].R, parts[l_from].L, decomposer.strategy)
        pixels = decomposer.to_pixels(decomposer.reconstruct(mixed))
        # the L source decides the target
        scores[combo] = psnr(pixels, images[l_from])
        targets[combo] = names[l_from]
    return SwapResult(scores["ll"], scores["ln"], scores["nl"], scores["nn"], targets)


def swap_study(pairs: Sequence[LoadedPair], decomposer: Decomposer) -> List[SwapResult]:
    """Swap protocol over every pair."""
    results = [swap_protocol(pair.low, pair.normal, decomposer) for pair in pairs]
    if results:
        logger.info(
            f"Swap study ({decomposer.strategy.value}, {len(results)} pairs): "
            f"mean PSNR {sum(r.mean for r in results) / len(results):.2f} dB"
        )
    return results


def mean_swap_row(results: Sequence[SwapResult]) -> Dict[str, float]:
    """Column-wise mean of swap results, plus their overall mean."""
    row = {name: sum(getattr(r, name) for r in results) / len(results) for name in SWAP_COLUMNS}
    row["mean"] = sum(row[name] for name in SWAP_COLUMNS) / len(SWAP_COLUMNS)
    return row


def cross_level_swap(images_by_level: Mapping[str, torch.Tensor], decomposer: Decomposer) -> Dict[Tuple[str, str], SwapResult]:
    """
    Swap protocol between every pair of brightness levels of one scene.

    For a key ``(a, b)`` the "low" role is played by level ``a`` and the
    "normal" role by level ``b``, following the order of ``images_by_level``.
    """
    levels = list(images_by_level)
    if len(levels) < 2:
        raise ValueError("cross-level swap needs at least two brightness levels")
    return {
        (a, b): swap_protocol(images_by_level[a], images_by_level[b], decomposer)
        for a, b in itertools.combinations(levels, 2)
    }
