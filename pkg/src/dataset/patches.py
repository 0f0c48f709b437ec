"""
Aligned patch sampling and lossless augmentation.

Every random draw comes from a caller-supplied ``numpy.random.Generator``, so
a fixed seed yields the same stream regardless of how images were loaded.
"""

from dataclasses import dataclass, replace
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import torch

from src.core.errors import DataError, ShapeMismatchError

from .pairs import LoadedPair

# (quarter turns, horizontal flip)
Transform = Tuple[int, bool]


@dataclass(frozen=True)
class PatchPair:
    low: torch.Tensor
    normal: torch.Tensor
    scene_id: str
    offset: Tuple[int, int]
    transforms: Tuple[Transform, ...] = ()


def apply_transform(img: torch.Tensor, k: int, flip: bool) -> torch.Tensor:
    """Rotate by ``k`` quarter turns over the last two axes, then optionally flip horizontally."""
    out = torch.rot90(img, k % 4, dims=(-2, -1))
    return out.flip(-1) if flip else out


def undo_transform(img: torch.Tensor, k: int, flip: bool) -> torch.Tensor:
    out = img.flip(-1) if flip else img
    return torch.rot90(out, -(k % 4), dims=(-2, -1))


def sample_patch(pair: LoadedPair, patch_size: int, rng: np.random.Generator) -> PatchPair:
    """Crop both images of ``pair`` at one random window of side ``patch_size``."""
    if pair.low.shape != pair.normal.shape:
        raise ShapeMismatchError(f"pair {pair.scene_id} is not aligned")
    h, w = pair.low.shape[-2:]
    if patch_size > min(h, w):
        raise DataError(f"patch size {patch_size} exceeds image {h}x{w} of {pair.scene_id}")
    row = int(rng.integers(0, h - patch_size + 1))
    col = int(rng.integers(0, w - patch_size + 1))
    window = (slice(row, row + patch_size), slice(col, col + patch_size))
    return PatchPair(
        low=pair.low[..., window[0], window[1]],
        normal=pair.normal[..., window[0], window[1]],
        scene_id=pair.scene_id,
        offset=(row, col),
    )


def augment(patch: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Apply one of the 8 right-angle rotation/flip combinations to both images."""
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    return replace(
        patch,
        low=apply_transform(patch.low, k, flip),
        normal=apply_transform(patch.normal, k, flip),
        transforms=patch.transforms + ((k, flip),),
    )


def invert_augment(patch: PatchPair) -> PatchPair:
    """Undo every recorded transform, returning the original crops."""
    low, normal = patch.low, patch.normal
    for k, flip in reversed(patch.transforms):
        low = undo_transform(low, k, flip)
        normal = undo_transform(normal, k, flip)
    return replace(patch, low=low, normal=normal, transforms=())


class PatchSampler:
    """
    Endless stream of augmented patch batches.

    Each batch element picks a pair uniformly, crops it and augments it. The
    batch is returned as ``(low, normal)`` tensors of shape ``(B, 3, P, P)``.
    """

    def __init__(self, pairs: Sequence[LoadedPair], patch_size: int, batch_size: int, seed: int, augment_patches: bool = True):
        if not pairs:
            raise DataError("cannot sample patches from an empty pair list")
        self.pairs = list(pairs)
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.augment_patches = augment_patches
        self.rng = np.random.default_rng(seed)

    def next_patches(self) -> List[PatchPair]:
        patches = []
        for _ in range(self.batch_size):
            pair = self.pairs[int(self.rng.integers(len(self.pairs)))]
            patch = sample_patch(pair, self.patch_size, self.rng)
            if self.augment_patches:
                patch = augment(patch, self.rng)
            patches.append(patch)
        return patches

    def next_batch(self) -> Tuple[torch.Tensor, torch.Tensor]:
        patches = self.next_patches()
        low = torch.stack([p.low for p in patches]).contiguous()
        normal = torch.stack([p.normal for p in patches]).contiguous()
        return low, normal

    def __iter__(self) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
        while True:
            yield self.next_batch()
