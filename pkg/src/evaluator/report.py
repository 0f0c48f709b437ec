"""
Dataset-level evaluation reports.

A report holds one (psnr, ssim) record per image plus aggregates, and is
written both as a CSV table with the fixed column order ``image_id,psnr,ssim``
and as a plain text document.
"""

import csv
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import torch
from loguru import logger

from src.core.errors import ArtifactError, DataError
from src.core.init import count_parameters
from src.dataset.pairs import LoadedPair

from .metrics import psnr, ssim

CSV_COLUMNS = ("image_id", "psnr", "ssim")

Enhancer = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class ImageMetric:
    image_id: str
    psnr: float
    ssim: float
    inference_ms: float = 0.0


@dataclass
class MetricReport:
    records: List[ImageMetric]
    parameter_count: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.records)

    def _values(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.records]

    @property
    def mean_psnr(self) -> float:
        return statistics.fmean(self._values("psnr"))

    @property
    def mean_ssim(self) -> float:
        return statistics.fmean(self._values("ssim"))

    @property
    def std_psnr(self) -> float:
        return statistics.pstdev(self._values("psnr"))

    @property
    def std_ssim(self) -> float:
        return statistics.pstdev(self._values("ssim"))

    @property
    def mean_inference_ms(self) -> float:
        return statistics.fmean(self._values("inference_ms"))

    def aggregate(self) -> Dict[str, float]:
        return {
            "count": self.count,
            "psnr_mean": self.mean_psnr,
            "psnr_std": self.std_psnr,
            "ssim_mean": self.mean_ssim,
            "ssim_std": self.std_ssim,
            "parameters": self.parameter_count,
            "inference_ms": self.mean_inference_ms,
        }

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for r in self.records:
                    writer.writerow([r.image_id, f"{r.psnr:.6f}", f"{r.ssim:.6f}"])
        except OSError as e:
            raise ArtifactError(f"cannot write metric table {path}: {e}")
        return path

    def to_text(self) -> str:
        lines = ["# evaluation report"]
        for key, value in self.metadata.items():
            lines.append(f"{key}: {value}")
        lines.append("")
        for r in self.records:
            lines.append(f"image {r.image_id}: psnr={r.psnr:.4f} dB ssim={r.ssim:.4f} time={r.inference_ms:.1f} ms")
        lines.append("")
        lines.append("aggregate:")
        for key, value in self.aggregate().items():
            lines.append(f"  {key}: {value:.4f}" if isinstance(value, float) else f"  {key}: {value}")
        return "\n".join(lines) + "\n"

    def write_text(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_text(), encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"cannot write report {path}: {e}")
        return path


def _score(enhancer: Enhancer, pair: LoadedPair) -> ImageMetric:
    start = time.perf_counter()
    with torch.no_grad():
        out = enhancer(pair.low)
    elapsed = (time.perf_counter() - start) * 1000.0
    return ImageMetric(pair.scene_id, psnr(out, pair.normal), ssim(out, pair.normal), elapsed)


def eval_dataset(
    enhancer: Enhancer,
    pairs: Sequence[LoadedPair],
    model: Optional[torch.nn.Module] = None,
    workers: int = 1,
) -> MetricReport:
    """
    Enhance every low image and score it against its normal-light reference.

    Args:
        enhancer: Maps a ``(3, H, W)`` pixel image to an enhanced one.
        pairs: Loaded evaluation pairs.
        model: Counted for the report's parameter column when given.
        workers: Images scored concurrently.
    """
    if not pairs:
        raise DataError("cannot evaluate an empty dataset")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda pair: _score(enhancer, pair), pairs))
    else:
        records = [_score(enhancer, pair) for pair in pairs]
    report = MetricReport(
        records,
        parameter_count=count_parameters(model) if model is not None else 0,
        metadata={"color_space": "RGB", "range": "[0, 1] float, no 8-bit quantization", "psnr_cap_db": 99.0},
    )
    logger.info(f"Evaluated {report.count} images: PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")
    return report
