"""
Multi-seed training stability study.

Every strategy is trained ``n_runs`` times from seeds ``cfg.seed + k``. The
loss log of each run is cut into epochs of ``cfg.epoch_steps`` steps, and the
mean and population variance of the per-epoch loss across runs are reported
together with the spread of the final reconstruction PSNR.
"""

import csv
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from loguru import logger

from src.core.config import TrainConfig
from src.core.errors import ArtifactError, NumericalAbort
from src.dataset.pairs import LoadedPair
from src.decomposer.strategy import DecompositionStrategy

from .record import TrainRunRecord
from .schedule import deterministic_mode
from .stages import reconstruction_psnr, train_decomposition

# full-scale figures quoted for context; desk runs are not expected to match them
REFERENCE_VALUES = {
    "additive": {"psnr_mean": 23.84, "psnr_var": 0.067},
    "multiplicative": {"psnr_mean": 22.16, "psnr_var": 0.157},
}

EPOCH_COLUMNS = ("epoch", "mean_loss", "var_loss")


@dataclass
class EpochStat:
    epoch: int
    mean_loss: float
    var_loss: float


@dataclass
class StrategyStability:
    strategy: str
    runs: int
    aborted: int
    epochs: List[EpochStat]
    final_psnr: List[float]
    clip_events: int = 0
    records: List[TrainRunRecord] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        return statistics.fmean(self.final_psnr) if self.final_psnr else float("nan")

    @property
    def psnr_var(self) -> float:
        return statistics.pvariance(self.final_psnr) if self.final_psnr else float("nan")

    def mean_losses(self) -> List[float]:
        return [e.mean_loss for e in self.epochs]


@dataclass
class StabilityReport:
    strategies: Dict[str, StrategyStability] = field(default_factory=dict)
    epoch_steps: int = 50

    def write_epoch_csv(self, strategy: str, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(EPOCH_COLUMNS)
                for e in self.strategies[strategy].epochs:
                    writer.writerow([e.epoch, repr(e.mean_loss), repr(e.var_loss)])
        except OSError as e:
            raise ArtifactError(f"cannot write stability table {path}: {e}")
        return path

    def summary_rows(self) -> List[Dict[str, Union[str, float, int]]]:
        return [
            {
                "strategy": s.strategy,
                "runs": s.runs,
                "aborted": s.aborted,
                "final_psnr_mean": s.psnr_mean,
                "final_psnr_var": s.psnr_var,
                "clip_events": s.clip_events,
            }
            for s in self.strategies.values()
        ]

    def summary_text(self) -> str:
        lines = [f"stability study, {self.epoch_steps} steps per epoch"]
        for s in self.strategies.values():
            lines.append(
                f"{s.strategy}: {s.runs} runs ({s.aborted} aborted), final PSNR mean {s.psnr_mean:.3f} dB, "
                f"variance {s.psnr_var:.4f}, {s.clip_events} clip events"
            )
        lines.append("reference (full scale, not reproduced at desk scale):")
        for kind, ref in REFERENCE_VALUES.items():
            lines.append(f"  {kind}: mean PSNR {ref['psnr_mean']}, variance {ref['psnr_var']}")
        return "\n".join(lines) + "\n"


def epoch_losses(record: TrainRunRecord, epoch_steps: int) -> List[float]:
    """Mean total loss per window of ``epoch_steps`` steps; a trailing partial window counts."""
    totals = record.totals()
    return [statistics.fmean(totals[i:i + epoch_steps]) for i in range(0, len(totals), epoch_steps)]


def moving_average(values: Sequence[float], window: int = 3) -> List[float]:
    if window <= 1 or len(values) < window:
        return list(values)
    return [statistics.fmean(values[i:i + window]) for i in range(len(values) - window + 1)]


def _summarize(strategy: str, runs: List[Optional[tuple]], epoch_steps: int) -> StrategyStability:
    finished = [r for r in runs if r is not None]
    curves = [epoch_losses(record, epoch_steps) for record, _ in finished]
    epochs = []
    if curves:
        for i in range(min(len(c) for c in curves)):
            values = [c[i] for c in curves]
            epochs.append(EpochStat(i, statistics.fmean(values), statistics.pvariance(values)))
    return StrategyStability(
        strategy=strategy,
        runs=len(runs),
        aborted=len(runs) - len(finished),
        epochs=epochs,
        final_psnr=[score for _, score in finished],
        clip_events=sum(record.clip_events for record, _ in finished),
        records=[record for record, _ in finished],
    )


def stability_study(
    cfg: TrainConfig,
    pairs: Sequence[LoadedPair],
    n_runs: Optional[int] = None,
    strategies: Optional[Sequence[str]] = None,
) -> StabilityReport:
    """
    Train every strategy ``n_runs`` times and collect per-epoch loss statistics.

    Runs that abort on a non-finite loss are counted, logged and left out of
    the statistics. With ``cfg.stability_workers > 1`` runs train concurrently,
    each with its own generators.
    """
    n_runs = cfg.stability_runs if n_runs is None else n_runs
    strategies = [DecompositionStrategy.parse(s).value for s in (strategies or ("full", "v1_latent_mult"))]
    seeds = [cfg.seed + k for k in range(n_runs)]
    report = StabilityReport(epoch_steps=cfg.epoch_steps)

    def one_run(strategy: str, seed: int):
        try:
            model, record = train_decomposition(cfg, pairs, strategy=strategy, seed=seed)
        except NumericalAbort as e:
            logger.warning(f"Stability run {strategy}/seed {seed} aborted: {e.message}")
            return None
        return record, reconstruction_psnr(model, pairs)

    with deterministic_mode(cfg.deterministic):
        for strategy in strategies:
            logger.info(f"Stability study: {n_runs} runs of '{strategy}'")
            if cfg.stability_workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.stability_workers) as pool:
                    runs = list(pool.map(lambda seed: one_run(strategy, seed), seeds))
            else:
                runs = [one_run(strategy, seed) for seed in seeds]
            report.strategies[strategy] = _summarize(strategy, runs, cfg.epoch_steps)
    logger.info(report.summary_text().rstrip())
    return report
