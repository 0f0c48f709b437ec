"""
Command dispatch for the ``rgt`` command line.

Every command resolves its config, runs, writes its artifacts into one output
directory together with a ``manifest.json``, and returns a process exit code.
Toolkit errors become their exit code plus one machine-parsable line on
stderr.
"""

import csv
import json
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import torch
from loguru import logger

from src.core.config import TrainConfig, load_config, output_root
from src.core.errors import ArtifactError, ConfigError, DataError, RgtError
from src.database.connection import create_db_engine, get_database_url, session_scope
from src.database.operations import RunOperations
from src.dataset.pairs import LoadedPair, load_folder, load_image, load_pairs, save_image, scan_pairs
from src.dataset.synthetic import make_toy_pairs
from src.decomposer.network import Decomposer
from src.evaluator.report import eval_dataset
from src.evaluator.swap import SWAP_COLUMNS, cross_level_swap, mean_swap_row, swap_study
from src.refiner.pipeline import ComponentRefiner, enhance
from src.trainer.stability import stability_study
from src.trainer.stages import default_strategies, train_decomposition, train_enhancement

from .plots import emit_plot_data

COMMANDS = ("train-decomp", "train-enhance", "enhance", "swap", "ablate", "stability", "eval")
PACKAGE_NAME = "retinex-guided-transformer"


@dataclass
class Command:
    name: str
    config_path: Optional[Path] = None
    overrides: List[str] = field(default_factory=list)
    output_dir: Optional[Path] = None
    decomposer: Optional[Path] = None
    refiner: Optional[Path] = None
    input_dir: Optional[Path] = None
    strategies: List[str] = field(default_factory=list)
    runs: Optional[int] = None
    levels: List[str] = field(default_factory=list)
    toy_pairs: int = 0
    registry: bool = True


@dataclass
class Context:
    cmd: Command
    cfg: TrainConfig
    out: Path
    artifacts: List[Path] = field(default_factory=list)

    def add(self, *paths: Path) -> None:
        self.artifacts.extend(paths)


def code_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _write_rows(path: Path, columns: Sequence[str], rows: List[dict]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise ArtifactError(f"cannot write {path}: {e}")
    return path


def _training_pairs(ctx: Context) -> List[LoadedPair]:
    cfg = ctx.cfg
    if ctx.cmd.toy_pairs > 0:
        logger.info(f"Using {ctx.cmd.toy_pairs} synthetic toy pairs")
        return make_toy_pairs(ctx.cmd.toy_pairs, cfg.patch_size, cfg.seed)
    if not cfg.data_root:
        raise ConfigError("data_root is not set; pass --set data_root=<dir> or --toy N")
    index = scan_pairs(cfg.data_root, cfg.low_dir, cfg.high_dir, cfg.max_pairs)
    return load_pairs(index, cfg.load_workers)


def _need(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ArtifactError(f"{what} checkpoint is required for this command")
    return path


def _persist(ctx: Context, action: Callable[[RunOperations], object]) -> None:
    if not ctx.cmd.registry:
        return
    try:
        engine = create_db_engine(get_database_url(ctx.out))
        with session_scope(engine) as session:
            action(RunOperations(session))
    except Exception as e:
        logger.warning(f"Run registry not updated: {str(e)}")


# --- command handlers -------------------------------------------------------


def _train_decomp(ctx: Context) -> None:
    cfg = ctx.cfg.replace(stage="decomposition")
    model, record = train_decomposition(cfg, _training_pairs(ctx))
    checkpoint = model.save(ctx.out / "decomposer.pt")
    record.checkpoint = str(checkpoint)
    ctx.add(checkpoint, *emit_plot_data(record, ctx.out / "train_log.csv"))
    _persist(ctx, lambda ops: ops.save_train_record(record))


def _train_enhance(ctx: Context) -> None:
    cfg = ctx.cfg.replace(stage="enhancement")
    decomposer = Decomposer.load(_need(ctx.cmd.decomposer, "decomposer"))
    refiner, record = train_enhancement(cfg, _training_pairs(ctx), decomposer)
    checkpoint = refiner.save(ctx.out / "refiner.pt")
    record.checkpoint = str(checkpoint)
    ctx.add(checkpoint, *emit_plot_data(record, ctx.out / "train_log.csv"))
    _persist(ctx, lambda ops: ops.save_train_record(record))


def _enhance(ctx: Context) -> None:
    decomposer = Decomposer.load(_need(ctx.cmd.decomposer, "decomposer"))
    refiner = ComponentRefiner.load(_need(ctx.cmd.refiner, "refiner"))
    if ctx.cmd.input_dir is None:
        raise ConfigError("enhance needs --input <folder>")
    for item in load_folder(ctx.cmd.input_dir):
        out = enhance(item.low, decomposer, refiner)
        ctx.add(save_image(out, ctx.out / "enhanced" / f"{item.scene_id}.png"))
    logger.info(f"Enhanced {len(ctx.artifacts)} images into {ctx.out / 'enhanced'}")


def _level_scenes(ctx: Context) -> Dict[str, Dict[str, torch.Tensor]]:
    cfg, levels = ctx.cfg, ctx.cmd.levels
    if not cfg.data_root:
        raise ConfigError("data_root is not set")
    indexes = [scan_pairs(cfg.data_root, levels[0], level) for level in levels[1:]]
    complete = sorted(set.intersection(*({e.scene_id for e in index} for index in indexes)))
    if not complete:
        raise DataError(f"no scene is present at every level {', '.join(levels)}")
    # the cap applies to scenes complete at every level
    shared = set(complete[:cfg.max_pairs] if cfg.max_pairs > 0 else complete)
    scenes: Dict[str, Dict[str, torch.Tensor]] = {}
    for level, index in zip(levels[1:], indexes):
        for entry in index:
            if entry.scene_id in shared:
                scene = scenes.setdefault(entry.scene_id, {levels[0]: load_image(entry.low_path)})
                scene[level] = load_image(entry.normal_path)
    return {sid: {level: scenes[sid][level] for level in levels} for sid in sorted(scenes)}


def _swap(ctx: Context) -> None:
    decomposer = Decomposer.load(_need(ctx.cmd.decomposer, "decomposer"))
    if len(ctx.cmd.levels) >= 2:
        rows = []
        for scene_id, images in _level_scenes(ctx).items():
            for (a, b), result in cross_level_swap(images, decomposer).items():
                rows.append({"image_id": scene_id, "level_a": a, "level_b": b, **result.as_row()})
        ctx.add(_write_rows(ctx.out / "cross_level_swap.csv", ("image_id", "level_a", "level_b") + SWAP_COLUMNS, rows))
        return
    pairs = _training_pairs(ctx)
    results = swap_study(pairs, decomposer)
    rows = [{"image_id": pair.scene_id, **result.as_row()} for pair, result in zip(pairs, results)]
    rows.append({"image_id": "mean", **mean_swap_row(results)})
    ctx.add(_write_rows(ctx.out / "swap.csv", ("image_id",) + SWAP_COLUMNS, rows))


def _ablate(ctx: Context) -> None:
    cfg = ctx.cfg.replace(stage="decomposition")
    pairs = _training_pairs(ctx)
    strategies = ctx.cmd.strategies or default_strategies()
    rows = []
    for strategy in strategies:
        model, record = train_decomposition(cfg, pairs, strategy=strategy)
        checkpoint = model.save(ctx.out / f"decomposer-{model.strategy.value}.pt")
        record.checkpoint = str(checkpoint)
        ctx.add(checkpoint, *emit_plot_data(record, ctx.out / f"train_log-{model.strategy.value}.csv"))
        _persist(ctx, lambda ops: ops.save_train_record(record))
        row = mean_swap_row(swap_study(pairs, model))
        rows.append({"strategy": model.strategy.value, **row, "clip_events": record.clip_events})
    ctx.add(_write_rows(ctx.out / "ablation.csv", ("strategy",) + SWAP_COLUMNS + ("mean", "clip_events"), rows))


def _stability(ctx: Context) -> None:
    cfg = ctx.cfg.replace(stage="decomposition")
    report = stability_study(cfg, _training_pairs(ctx), n_runs=ctx.cmd.runs, strategies=ctx.cmd.strategies or None)
    ctx.add(*emit_plot_data(report, ctx.out / "stability"))
    columns = ("strategy", "runs", "aborted", "final_psnr_mean", "final_psnr_var", "clip_events")
    ctx.add(_write_rows(ctx.out / "stability_summary.csv", columns, report.summary_rows()))
    summary = ctx.out / "stability_summary.txt"
    summary.write_text(report.summary_text(), encoding="utf-8")
    ctx.add(summary)

    def save_runs(ops: RunOperations) -> None:
        for stats in report.strategies.values():
            for record in stats.records:
                ops.save_train_record(record)

    _persist(ctx, save_runs)


def _eval(ctx: Context) -> None:
    decomposer = Decomposer.load(_need(ctx.cmd.decomposer, "decomposer"))
    refiner = ComponentRefiner.load(_need(ctx.cmd.refiner, "refiner"))
    report = eval_dataset(
        lambda img: enhance(img, decomposer, refiner),
        _training_pairs(ctx),
        model=torch.nn.ModuleList([decomposer, refiner]),
    )
    ctx.add(report.write_csv(ctx.out / "metrics.csv"), report.write_text(ctx.out / "report.txt"))
    run_uid = ctx.out.name
    _persist(ctx, lambda ops: ops.save_metric_report(run_uid, report))


HANDLERS: Dict[str, Callable[[Context], None]] = {
    "train-decomp": _train_decomp,
    "train-enhance": _train_enhance,
    "enhance": _enhance,
    "swap": _swap,
    "ablate": _ablate,
    "stability": _stability,
    "eval": _eval,
}


def write_manifest(ctx: Context, status: str, elapsed: float) -> Path:
    manifest = {
        "command": ctx.cmd.name,
        "status": status,
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "code_version": code_version(),
        "torch_version": torch.__version__,
        "seed": ctx.cfg.seed,
        "config": ctx.cfg.to_dict(),
        "overrides": list(ctx.cmd.overrides),
        "inputs": {
            "config_path": str(ctx.cmd.config_path) if ctx.cmd.config_path else None,
            "decomposer": str(ctx.cmd.decomposer) if ctx.cmd.decomposer else None,
            "refiner": str(ctx.cmd.refiner) if ctx.cmd.refiner else None,
            "input_dir": str(ctx.cmd.input_dir) if ctx.cmd.input_dir else None,
            "toy_pairs": ctx.cmd.toy_pairs,
        },
        "artifacts": [str(p.relative_to(ctx.out)) if p.is_relative_to(ctx.out) else str(p) for p in ctx.artifacts],
        "elapsed_s": round(elapsed, 3),
    }
    path = ctx.out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"cannot write manifest {path}: {e}")
    return path


def _report_error(err: RgtError) -> int:
    logger.error(err.message)
    print(err.one_line(), file=sys.stderr)
    return err.exit_code


def run(cmd: Command) -> int:
    """Execute ``cmd`` and return its exit status."""
    ctx = None
    start = time.perf_counter()
    try:
        if cmd.name not in HANDLERS:
            raise ConfigError(f"unknown command '{cmd.name}'; valid commands: {', '.join(COMMANDS)}")
        cfg = load_config(cmd.config_path, cmd.overrides)
        out = Path(cmd.output_dir) if cmd.output_dir else output_root() / f"{cmd.name}-{datetime.now():%Y%m%d-%H%M%S}"
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactError(f"cannot create output directory {out}: {e}")
        ctx = Context(cmd, cfg, out)
        logger.info(f"Running '{cmd.name}' (seed {cfg.seed}) into {out}")
        HANDLERS[cmd.name](ctx)
        write_manifest(ctx, "ok", time.perf_counter() - start)
        logger.info(f"'{cmd.name}' finished with {len(ctx.artifacts)} artifacts")
        return 0
    except RgtError as e:
        if ctx is not None:
            try:
                write_manifest(ctx, f"error: {type(e).__name__}", time.perf_counter() - start)
            except RgtError:
                pass
        return _report_error(e)
    except OSError as e:
        return _report_error(ArtifactError(str(e)))
