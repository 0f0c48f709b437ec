"""
Dual-branch decomposer.

The input image (log domain for log strategies) is concatenated with its
illumination prior, projected to C channels, and split by two independent
transformer branches into reflectance and illumination parts. The
reconstruction rule is fixed by the strategy.
"""

from pathlib import Path
from typing import Any, Dict, Tuple, Union

import torch
from loguru import logger
from torch import nn

from src.core.blocks import GuidanceFusionBlock
from src.core.checkpoint import load_checkpoint, save_checkpoint
from src.core.config import TrainConfig
from src.core.errors import ArtifactError, NumericalError, ShapeMismatchError, StrategyMismatchError
from src.core.init import initialize_weights, make_generator
from src.imaging.transforms import illumination_prior, log_forward, log_inverse, validate_pixels

from .strategy import DecompositionStrategy, LatentComponents

CHECKPOINT_KIND = "decomposer"


class Decomposer(nn.Module):
    def __init__(
        self,
        strategy: Union[str, DecompositionStrategy] = DecompositionStrategy.FULL,
        channels: int = 8,
        heads: int = 1,
        ffn_expansion: float = 2.0,
        depth: int = 1,
        qk_norm: bool = True,
    ):
        super().__init__()
        self.strategy = DecompositionStrategy.parse(strategy)
        self.channels = channels
        self.hyper = {"heads": heads, "ffn_expansion": float(ffn_expansion), "depth": depth, "qk_norm": bool(qk_norm)}

        def branch(tag: str) -> nn.ModuleList:
            return nn.ModuleList(
                GuidanceFusionBlock(channels, heads, ffn_expansion, fusion="none", qk_norm=qk_norm, name=f"decomposer.{tag}_branch.{i}")
                for i in range(depth)
            )

        self.input_proj = nn.Conv2d(4, channels, kernel_size=3, padding=1)
        self.r_branch = branch("r")
        self.l_branch = branch("l")

        if self.strategy.space == "latent":
            self.r_head = nn.Conv2d(channels, channels, kernel_size=1)
            self.l_head = nn.Conv2d(channels, channels, kernel_size=1)
            self.out_proj = nn.Conv2d(channels, 3, kernel_size=3, padding=1)
        else:
            l_out = 1 if self.strategy is DecompositionStrategy.V0_PIXEL_MULT else 3
            self.r_head = nn.Conv2d(channels, 3, kernel_size=1)
            self.l_head = nn.Conv2d(channels, l_out, kernel_size=1)
            self.out_proj = None
        self.reset_custom_parameters()

    @classmethod
    def from_config(cls, cfg: TrainConfig, strategy=None, seed: int = None) -> "Decomposer":
        """Build and initialize a decomposer from a config; ``seed`` defaults to ``cfg.seed``."""
        model = cls(
            strategy or cfg.strategy,
            channels=cfg.channels,
            heads=cfg.heads,
            ffn_expansion=cfg.ffn_expansion,
            depth=cfg.decomposer_depth,
            qk_norm=cfg.qk_norm,
        )
        initialize_weights(model, make_generator(cfg.seed if seed is None else seed))
        return model

    def reset_custom_parameters(self):
        # clipped pixel components start mid-range
        if self.strategy is DecompositionStrategy.V0_PIXEL_MULT:
            with torch.no_grad():
                self.r_head.bias.fill_(0.5)
                self.l_head.bias.fill_(0.5)

    # -- domains -----------------------------------------------------------

    def prepare(self, img: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Map a pixel image to the strategy's input domain and compute its prior."""
        x = log_forward(img) if self.strategy.log_transform else validate_pixels(img)
        return x, illumination_prior(x).data

    def to_pixels(self, out: torch.Tensor) -> torch.Tensor:
        """Map a reconstruction back to a pixel image in [0, 1]."""
        return log_inverse(out) if self.strategy.log_transform else out.clamp(0.0, 1.0)

    # -- f_dec / f_rec -----------------------------------------------------

    @staticmethod
    def _check_finite(t: torch.Tensor, layer: str) -> torch.Tensor:
        if not torch.isfinite(t).all():
            raise NumericalError(f"non-finite activations in decomposer.{layer}")
        return t

    def decompose(self, x: torch.Tensor, p: torch.Tensor) -> LatentComponents:
        """
        Split ``x`` ``(B, 3, H, W)`` with prior ``p`` ``(B, 1, H, W)`` into (R, L).
        """
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeMismatchError(f"decomposer input must be (B, 3, H, W), got {tuple(x.shape)}")
        if p.shape != (x.shape[0], 1) + tuple(x.shape[-2:]):
            raise ShapeMismatchError(f"prior {tuple(p.shape)} is not aligned with input {tuple(x.shape)}")

        f = self._check_finite(self.input_proj(torch.cat([x, p], dim=1)), "input_proj")
        r, l = f, f
        for block in self.r_branch:
            r = block(r)
        for block in self.l_branch:
            l = block(l)
        R = self._check_finite(self.r_head(r), "r_head")
        L = self._check_finite(self.l_head(l), "l_head")
        if self.strategy is DecompositionStrategy.V0_PIXEL_MULT:
            R, L = R.clamp(0.0, 1.0), L.clamp(0.0, 1.0)
        return LatentComponents(R, L, self.strategy)

    def expected_shapes(self, like: torch.Tensor) -> Tuple[tuple, tuple]:
        b, h, w = like.shape[0], like.shape[-2], like.shape[-1]
        r_ch = self.channels if self.strategy.space == "latent" else 3
        l_ch = 1 if self.strategy is DecompositionStrategy.V0_PIXEL_MULT else r_ch
        return (b, r_ch, h, w), (b, l_ch, h, w)

    def reconstruct(self, c: LatentComponents) -> torch.Tensor:
        """Combine (R, L) by the strategy's rule; output lives in the input domain."""
        if c.strategy is not self.strategy:
            raise StrategyMismatchError(
                f"components from strategy '{c.strategy.value}' given to a '{self.strategy.value}' decomposer"
            )
        r_shape, l_shape = self.expected_shapes(c.R)
        if tuple(c.R.shape) != r_shape or tuple(c.L.shape) != l_shape:
            raise StrategyMismatchError(
                f"component shapes {tuple(c.R.shape)}/{tuple(c.L.shape)} do not fit strategy '{self.strategy.value}'"
            )
        merged = c.R + c.L if self.strategy.additive else c.R * c.L
        if self.out_proj is not None:
            merged = self.out_proj(merged)
        return self._check_finite(merged, "reconstruct")

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x, p = self.prepare(img)
        return self.reconstruct(self.decompose(x, p))

    def round_trip(self, img: torch.Tensor) -> torch.Tensor:
        """Decompose and reconstruct a pixel image, returning pixels."""
        return self.to_pixels(self(img))

    # -- persistence -------------------------------------------------------

    def header(self) -> Dict[str, Any]:
        return {"strategy": self.strategy.value, "channels": self.channels, **self.hyper}

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, CHECKPOINT_KIND, self.header(), {"decomposer": self.state_dict()})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Decomposer":
        header, tensors = load_checkpoint(path, CHECKPOINT_KIND)
        try:
            model = cls(
                header["strategy"],
                channels=header["channels"],
                heads=header["heads"],
                ffn_expansion=header["ffn_expansion"],
                depth=header["depth"],
                qk_norm=header["qk_norm"],
            )
            model.load_state_dict(tensors["decomposer"])
        except (KeyError, RuntimeError) as e:
            raise ArtifactError(f"decomposer checkpoint {path} does not match its header: {e}")
        logger.debug(f"Loaded {model.strategy.value} decomposer (C={model.channels}) from {path}")
        return model


def freeze(model: nn.Module) -> nn.Module:
    """Disable gradients, drop stored ones and switch to eval mode."""
    for param in model.parameters():
        param.requires_grad_(False)
        param.grad = None
    return model.eval()
