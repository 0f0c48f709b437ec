"""
The two training stages.

Stage 1 fits a decomposer on low/normal pairs: both images of a pair go
through the same weights and share one loss. Stage 2 freezes that decomposer
and fits the two refiner branches on the log-domain enhancement loss.
"""

import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from loguru import logger

from src.core.checkpoint import state_checksum
from src.core.config import TrainConfig
from src.core.errors import ConfigError, FreezeViolation, NumericalAbort, NumericalError
from src.dataset.pairs import LoadedPair
from src.dataset.patches import PatchSampler
from src.decomposer.network import Decomposer, freeze
from src.decomposer.strategy import DecompositionStrategy
from src.evaluator.metrics import psnr
from src.imaging.transforms import log_forward
from src.losses.perceptual import build_extractor, enhance_loss
from src.losses.retinex import decom_loss
from src.refiner.pipeline import ComponentRefiner, check_pair, enhance, enhance_log

from .record import TrainRunRecord
from .schedule import deterministic_mode, lr_schedule, make_optimizer, set_lr

StepFn = Callable[[int], Tuple[torch.Tensor, Dict[str, float]]]


def _require_stage(cfg: TrainConfig, stage: str) -> None:
    if cfg.stage != stage:
        raise ConfigError(f"config stage is '{cfg.stage}', expected '{stage}'")


def _optimize(
    cfg: TrainConfig,
    params: List[torch.nn.Parameter],
    step_fn: StepFn,
    record: TrainRunRecord,
    clip: bool,
) -> TrainRunRecord:
    """Run ``cfg.iterations`` optimizer steps, logging every step into ``record``."""
    optimizer = make_optimizer(params, cfg)
    start = time.perf_counter()
    for step in range(cfg.iterations):
        lr = lr_schedule(step, cfg)
        set_lr(optimizer, lr)
        try:
            total, terms = step_fn(step)
        except NumericalAbort:
            raise
        except NumericalError as e:
            raise NumericalAbort(step, {"error": e.message}) from e
        value = total.detach().item()
        if not math.isfinite(value):
            raise NumericalAbort(step, {"total": value, **terms})

        optimizer.zero_grad(set_to_none=True)
        total.backward()
        if clip:
            norm = float(torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip))
            if norm > cfg.grad_clip:
                record.clip_events += 1
                logger.warning(f"step {step}: gradient norm {norm:.3g} clipped to {cfg.grad_clip}")
        optimizer.step()

        record.log(step, lr, value, terms)
        if step % cfg.log_every == 0 or step == cfg.iterations - 1:
            breakdown = " ".join(f"{name}={value:.5f}" for name, value in terms.items())
            logger.info(f"[{record.stage}/{record.strategy} seed={record.seed}] step {step} lr={lr:.3e} total={value:.5f} {breakdown}")
    optimizer.zero_grad(set_to_none=True)
    record.wall_time = time.perf_counter() - start
    return record


def train_decomposition(
    cfg: TrainConfig,
    pairs: Sequence[LoadedPair],
    strategy: Optional[str] = None,
    seed: Optional[int] = None,
) -> Tuple[Decomposer, TrainRunRecord]:
    """
    Fit a decomposer on paired images.

    Args:
        cfg: Stage "decomposition" config.
        pairs: Loaded training pairs.
        strategy: Overrides ``cfg.strategy`` (ablation sweeps).
        seed: Overrides ``cfg.seed`` (stability runs).

    Returns:
        The trained decomposer and its run record.
    """
    _require_stage(cfg, "decomposition")
    seed = cfg.seed if seed is None else seed
    with deterministic_mode(cfg.deterministic):
        model = Decomposer.from_config(cfg, strategy=strategy, seed=seed)
        model.train()
        sampler = PatchSampler(pairs, cfg.patch_size, cfg.batch_size, seed, augment_patches=cfg.augment)
        record = TrainRunRecord("decomposition", model.strategy.value, seed)

        def step_fn(step: int):
            low, normal = sampler.next_batch()
            s_l, p_l = model.prepare(low)
            s_n, p_n = model.prepare(normal)
            terms = decom_loss(
                model.decompose(s_l, p_l),
                model.decompose(s_n, p_n),
                s_l,
                s_n,
                model.reconstruct,
                cfg.lambda1,
                cfg.lambda2,
                cfg.alpha_smooth,
            )
            return terms.total, terms.as_floats()

        # the full strategy trains unclipped
        clip = not model.strategy.additive and cfg.grad_clip > 0
        _optimize(cfg, list(model.parameters()), step_fn, record, clip)
    model.eval()
    logger.info(
        f"Decomposition training ({model.strategy.value}, seed {seed}) finished in {record.wall_time:.1f}s, "
        f"final loss {record.final_loss:.5f}, {record.clip_events} clip events"
    )
    return model, record


def train_enhancement(
    cfg: TrainConfig,
    pairs: Sequence[LoadedPair],
    decomposer: Decomposer,
    seed: Optional[int] = None,
) -> Tuple[ComponentRefiner, TrainRunRecord]:
    """
    Fit the refiner branches with ``decomposer`` frozen.

    The decomposer's weights are checksummed before and after; any change
    raises FreezeViolation.
    """
    _require_stage(cfg, "enhancement")
    seed = cfg.seed if seed is None else seed
    freeze(decomposer)
    before = state_checksum(decomposer)
    with deterministic_mode(cfg.deterministic):
        refiner = ComponentRefiner.from_config(cfg, seed=seed)
        check_pair(decomposer, refiner)
        refiner.train()
        extractor = build_extractor(cfg.perceptual)
        sampler = PatchSampler(pairs, cfg.patch_size, cfg.batch_size, seed, augment_patches=cfg.augment)
        record = TrainRunRecord("enhancement", decomposer.strategy.value, seed)

        def step_fn(step: int):
            low, normal = sampler.next_batch()
            terms = enhance_loss(enhance_log(low, decomposer, refiner), log_forward(normal), cfg.lambda_p, extractor)
            return terms.total, terms.as_floats()

        _optimize(cfg, list(refiner.parameters()), step_fn, record, clip=False)
    refiner.eval()
    if state_checksum(decomposer) != before:
        raise FreezeViolation("decomposer weights changed during enhancement training")
    logger.info(f"Enhancement training (seed {seed}) finished in {record.wall_time:.1f}s, final loss {record.final_loss:.5f}")
    return refiner, record


@torch.no_grad()
def reconstruction_psnr(decomposer: Decomposer, pairs: Sequence[LoadedPair]) -> float:
    """Mean round-trip PSNR over both images of every pair."""
    scores = []
    for pair in pairs:
        for img in (pair.low, pair.normal):
            scores.append(psnr(decomposer.round_trip(img.unsqueeze(0))[0], img))
    return sum(scores) / len(scores)


@torch.no_grad()
def enhancement_psnr(decomposer: Decomposer, refiner: ComponentRefiner, pairs: Sequence[LoadedPair]) -> float:
    scores = [psnr(enhance(pair.low, decomposer, refiner), pair.normal) for pair in pairs]
    return sum(scores) / len(scores)


def default_strategies() -> List[str]:
    return [s.value for s in DecompositionStrategy]
