"""
Plot-ready data for loss curves.

CSV files are always written; a static PNG is added when matplotlib is
installed and is never required for a command to succeed.
"""

from pathlib import Path
from typing import List, Union

from loguru import logger

from src.trainer.record import TrainRunRecord
from src.trainer.stability import StabilityReport


def _line_plot(path: Path, title: str, curves: dict, ylabel: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.debug("matplotlib not installed; skipping PNG plot")
        return
    try:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, (xs, ys) in curves.items():
            ax.plot(xs, ys, label=label)
        ax.set_title(title)
        ax.set_xlabel("epoch" if "epoch" in title else "step")
        ax.set_ylabel(ylabel)
        if len(curves) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
    except Exception as e:
        logger.warning(f"Could not draw {path}: {str(e)}")


def emit_plot_data(source: Union[TrainRunRecord, StabilityReport], path: Union[str, Path]) -> List[Path]:
    """
    Write the curve data of a run record or a stability report.

    A record goes to the CSV file ``path`` (``step,lr,total,<terms>``). A
    stability report goes to the directory ``path`` as one
    ``<strategy>.csv`` (``epoch,mean_loss,var_loss``) per strategy.

    Returns:
        The CSV files written.
    """
    path = Path(path)
    if isinstance(source, TrainRunRecord):
        written = [source.write_csv(path)]
        if source.steps:
            _line_plot(
                path.with_suffix(".png"),
                f"{source.stage} loss ({source.strategy})",
                {"total": ([s.step for s in source.steps], source.totals())},
                "loss",
            )
        return written

    written = [source.write_epoch_csv(strategy, path / f"{strategy}.csv") for strategy in source.strategies]
    curves = {
        name: ([e.epoch for e in stats.epochs], stats.mean_losses())
        for name, stats in source.strategies.items()
        if stats.epochs
    }
    if curves:
        _line_plot(path / "stability.png", "mean loss per epoch", curves, "mean loss")
    return written
