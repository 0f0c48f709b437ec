"""
Learning-rate schedule, optimizer construction and determinism switches.
"""

import math
import os
from contextlib import contextmanager
from typing import Iterable, Iterator

import torch
from loguru import logger

from src.core.config import TrainConfig


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_initial`` at step 0 to ``lr_final`` at ``cfg.iterations``."""
    t = min(max(step, 0), cfg.iterations)
    return cfg.lr_final + 0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + math.cos(math.pi * t / cfg.iterations))


def make_optimizer(params: Iterable[torch.nn.Parameter], cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.lr_initial, betas=(cfg.beta1, cfg.beta2), weight_decay=0.0)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


@contextmanager
def deterministic_mode(enabled: bool) -> Iterator[None]:
    """Force deterministic kernels while the block runs, restoring the previous setting after."""
    if not enabled:
        yield
        return
    previous = torch.are_deterministic_algorithms_enabled()
    previous_workspace = os.environ.get("CUBLAS_WORKSPACE_CONFIG")
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(True)
    logger.debug("Deterministic algorithms enabled")
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)
        if previous_workspace is None:
            os.environ.pop("CUBLAS_WORKSPACE_CONFIG", None)
