"""
Component refiner and the end-to-end enhancement pipeline.
"""

from pathlib import Path
from typing import Any, Dict, Sequence, Union

import torch
from loguru import logger
from torch import nn

from src.core.checkpoint import load_checkpoint, save_checkpoint
from src.core.config import TrainConfig
from src.core.errors import ArtifactError, StrategyMismatchError
from src.core.init import initialize_weights, make_generator
from src.decomposer.network import Decomposer
from src.decomposer.strategy import DecompositionStrategy
from src.imaging.transforms import guidance, log_inverse

from .unet import RefinerBranch

CHECKPOINT_KIND = "refiner"


class ComponentRefiner(nn.Module):
    """Two independent refiner branches, one for R and one for L."""

    def __init__(
        self,
        channels: int = 8,
        blocks: Sequence[int] = (1, 2, 2),
        heads: int = 1,
        ffn_expansion: float = 2.0,
        fusion: str = "cross",
        qk_norm: bool = True,
        r_guidance: str = "mean",
        l_guidance: str = "max",
    ):
        super().__init__()
        self.channels = channels
        self.hyper = {
            "blocks": [int(b) for b in blocks],
            "heads": heads,
            "ffn_expansion": float(ffn_expansion),
            "fusion": fusion,
            "qk_norm": bool(qk_norm),
            "r_guidance": r_guidance,
            "l_guidance": l_guidance,
        }
        self.r_branch = RefinerBranch(channels, blocks, heads, ffn_expansion, fusion, qk_norm, pool="avg", tag="R")
        self.l_branch = RefinerBranch(channels, blocks, heads, ffn_expansion, fusion, qk_norm, pool="max", tag="L")

    @classmethod
    def from_config(cls, cfg: TrainConfig, seed: int = None) -> "ComponentRefiner":
        model = cls(
            channels=cfg.channels,
            blocks=cfg.refiner_blocks,
            heads=cfg.heads,
            ffn_expansion=cfg.ffn_expansion,
            fusion=cfg.gftb_fusion,
            qk_norm=cfg.qk_norm,
            r_guidance=cfg.r_guidance,
            l_guidance=cfg.l_guidance,
        )
        initialize_weights(model, make_generator(cfg.seed if seed is None else seed))
        return model

    def refine_r(self, R: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        return self.r_branch(R, guidance(s, self.hyper["r_guidance"]).data)

    def refine_l(self, L: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        return self.l_branch(L, guidance(s, self.hyper["l_guidance"]).data)

    def header(self) -> Dict[str, Any]:
        return {"channels": self.channels, **self.hyper}

    def save(self, path: Union[str, Path]) -> Path:
        tensors = {"R": self.r_branch.state_dict(), "L": self.l_branch.state_dict()}
        return save_checkpoint(path, CHECKPOINT_KIND, self.header(), tensors)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ComponentRefiner":
        header, tensors = load_checkpoint(path, CHECKPOINT_KIND)
        try:
            model = cls(**header)
            model.r_branch.load_state_dict(tensors["R"])
            model.l_branch.load_state_dict(tensors["L"])
        except (KeyError, TypeError, RuntimeError) as e:
            raise ArtifactError(f"refiner checkpoint {path} does not match its header: {e}")
        logger.debug(f"Loaded refiner (C={model.channels}, fusion={model.hyper['fusion']}) from {path}")
        return model


def refine_component(x: torch.Tensor, g: torch.Tensor, branch: RefinerBranch) -> torch.Tensor:
    """Refine one latent component with its guidance map."""
    return branch(x, g)


def check_pair(decomposer: Decomposer, refiner: ComponentRefiner) -> None:
    if decomposer.strategy is not DecompositionStrategy.FULL:
        raise StrategyMismatchError(
            f"enhancement needs a '{DecompositionStrategy.FULL.value}' decomposer, got '{decomposer.strategy.value}'"
        )
    if decomposer.channels != refiner.channels:
        raise StrategyMismatchError(
            f"decomposer has {decomposer.channels} channels but the refiner expects {refiner.channels}"
        )


def enhance_log(img: torch.Tensor, decomposer: Decomposer, refiner: ComponentRefiner) -> torch.Tensor:
    """
    Enhanced log image S_en for a batch of low-light pixels.

    The decomposition runs without gradients; gradients flow through the
    refiner and the reconstruction node only.
    """
    check_pair(decomposer, refiner)
    with torch.no_grad():
        s, p = decomposer.prepare(img)
        parts = decomposer.decompose(s, p)
    refined = parts.replace(R=refiner.refine_r(parts.R, s), L=refiner.refine_l(parts.L, s))
    return decomposer.reconstruct(refined)


def enhance(img: torch.Tensor, decomposer: Decomposer, refiner: ComponentRefiner) -> torch.Tensor:
    """
    Enhance a low-light image ``(3, H, W)`` or batch ``(B, 3, H, W)``.

    Returns pixels in [0, 1] with the input's shape.
    """
    single = img.dim() == 3
    batch = img.unsqueeze(0) if single else img
    with torch.no_grad():
        out = log_inverse(enhance_log(batch, decomposer, refiner))
    return out[0] if single else out
