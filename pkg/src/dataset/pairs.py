"""
Paired low/normal-light image ingestion.

A dataset root holds two folders (``low/`` and ``high/`` by default) with
identically named files; each shared name is one scene.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Union

import numpy as np
import torch
from loguru import logger
from PIL import Image, UnidentifiedImageError

from src.core.errors import DataError, ShapeMismatchError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class PairEntry:
    low_path: Path
    normal_path: Path
    scene_id: str


@dataclass
class PairIndex:
    """Matched image pairs, sorted by scene id."""

    entries: List[PairEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PairEntry]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> PairEntry:
        return self.entries[i]


@dataclass
class LoadedPair:
    """Decoded pair, each image ``(3, H, W)`` float32 in [0, 1]."""

    low: torch.Tensor
    normal: torch.Tensor
    scene_id: str


def _image_files(folder: Path) -> dict:
    if not folder.is_dir():
        raise DataError(f"missing image folder: {folder}")
    return {p.name: p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def _one_per_stem(names: Iterable[str], where: Path) -> List[str]:
    """Sort by (stem, name) and keep the first file of every stem."""
    kept, dropped, stems = [], [], set()
    for name in sorted(names, key=lambda n: (Path(n).stem, n)):
        stem = Path(name).stem
        if stem in stems:
            dropped.append(name)
        else:
            stems.add(stem)
            kept.append(name)
    if dropped:
        logger.warning(f"Skipping files whose scene id is already taken in {where}: {', '.join(dropped)}")
    return kept


def scan_pairs(
    root_dir: Union[str, Path],
    low_dir: str = "low",
    high_dir: str = "high",
    max_pairs: int = 0,
) -> PairIndex:
    """
    Match files present in both folders.

    Args:
        root_dir: Dataset root.
        low_dir, high_dir: Folder names below the root.
        max_pairs: Keep only the first N pairs by scene id; 0 keeps all.

    Returns:
        PairIndex sorted by scene id.

    Raises:
        DataError: When a folder is missing or no file name is shared.
    """
    root = Path(root_dir)
    lows = _image_files(root / low_dir)
    highs = _image_files(root / high_dir)

    shared = _one_per_stem(set(lows) & set(highs), root)
    unmatched = sorted(set(lows) ^ set(highs))
    if unmatched:
        logger.warning(f"Unmatched files in {root}: {', '.join(unmatched)}")
    if not shared:
        raise DataError(f"no pairs found under {root}")

    entries = [PairEntry(lows[name], highs[name], Path(name).stem) for name in shared]
    if max_pairs > 0:
        entries = entries[:max_pairs]
    logger.info(f"Indexed {len(entries)} image pairs from {root}")
    return PairIndex(entries)


def load_image(path: Union[str, Path]) -> torch.Tensor:
    """Decode an 8-bit PNG/JPEG into a ``(3, H, W)`` float tensor in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"cannot read image {path}: {e}")
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).to(torch.float32) / 255.0


def save_image(img: torch.Tensor, path: Union[str, Path]) -> Path:
    """Write a ``(3, H, W)`` image in [0, 1] as 8-bit PNG."""
    path = Path(path)
    arr = (img.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy() * 255.0 + 0.5).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return path


def _load_entry(entry: PairEntry) -> LoadedPair:
    low = load_image(entry.low_path)
    normal = load_image(entry.normal_path)
    if low.shape != normal.shape:
        raise ShapeMismatchError(
            f"pair {entry.scene_id}: low {tuple(low.shape)} and normal {tuple(normal.shape)} differ"
        )
    return LoadedPair(low, normal, entry.scene_id)


def load_pairs(index: PairIndex, workers: int = 4) -> List[LoadedPair]:
    """Decode every pair; files are read concurrently but returned in index order."""
    if workers <= 1 or len(index) <= 1:
        return [_load_entry(entry) for entry in index]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_load_entry, index.entries))


def load_folder(folder: Union[str, Path]) -> List[LoadedPair]:
    """Single images of a folder, as pairs whose normal image is the input itself."""
    folder = Path(folder)
    found = _image_files(folder)
    files = [found[name] for name in _one_per_stem(found, folder)]
    if not files:
        raise DataError(f"no images found in {folder}")
    images = []
    for path in files:
        img = load_image(path)
        images.append(LoadedPair(img, img, path.stem))
    return images
