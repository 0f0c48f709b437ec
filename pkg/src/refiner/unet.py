"""
Three-scale U-shaped refiner branch.

Each scale stacks guidance fusion blocks; strided 4×4 convolutions halve the
resolution and double the channels, transposed convolutions undo it, and skip
connections are fused with a 1×1 convolution. The branch predicts an additive
correction from a zero-initialized head, so a fresh branch is the identity.
"""

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from src.core.blocks import GuidanceFusionBlock
from src.core.errors import ShapeMismatchError
from src.core.init import zero_init

POOLS = ("avg", "max")
SCALES = 3


class RefinerBranch(nn.Module):
    def __init__(
        self,
        channels: int,
        blocks: Sequence[int] = (1, 2, 2),
        heads: int = 1,
        ffn_expansion: float = 2.0,
        fusion: str = "cross",
        qk_norm: bool = True,
        pool: str = "avg",
        tag: str = "R",
    ):
        super().__init__()
        if len(blocks) != SCALES:
            raise ValueError(f"a refiner branch has exactly {SCALES} scales, got {len(blocks)} block counts")
        if pool not in POOLS:
            raise ValueError(f"unknown guidance pooling '{pool}'")
        self.channels = channels
        self.pool = pool
        self.tag = tag
        widths = [channels * 2 ** i for i in range(SCALES)]

        def stage(width: int, count: int, name: str) -> nn.ModuleList:
            return nn.ModuleList(
                GuidanceFusionBlock(width, heads, ffn_expansion, fusion, qk_norm, name=f"refiner.{tag}.{name}.{i}")
                for i in range(count)
            )

        self.encoders = nn.ModuleList(stage(widths[i], blocks[i], f"enc{i}") for i in range(SCALES))
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], kernel_size=4, stride=2, padding=1) for i in range(SCALES - 1)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2) for i in range(SCALES - 1)
        )
        self.reduces = nn.ModuleList(nn.Conv2d(widths[i] * 2, widths[i], kernel_size=1) for i in range(SCALES - 1))
        self.decoders = nn.ModuleList(stage(widths[i], blocks[i], f"dec{i}") for i in range(SCALES - 1))
        self.head = zero_init(nn.Conv2d(channels, channels, kernel_size=3, padding=1))
        self.reset_custom_parameters()

    def reset_custom_parameters(self):
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def _pool(self, g: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(g, 2) if self.pool == "avg" else F.max_pool2d(g, 2)

    @staticmethod
    def _run(stage: nn.ModuleList, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        for block in stage:
            x = block(x, g)
        return x

    def correction(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        """The additive correction for ``x`` whose sides are multiples of 4."""
        guides = [g]
        for _ in range(SCALES - 1):
            guides.append(self._pool(guides[-1]))

        skips = []
        h = x
        for i in range(SCALES):
            h = self._run(self.encoders[i], h, guides[i])
            if i < SCALES - 1:
                skips.append(h)
                h = self.downs[i](h)
        for i in reversed(range(SCALES - 1)):
            h = self.ups[i](h)
            h = self.reduces[i](torch.cat([h, skips[i]], dim=1))
            h = self._run(self.decoders[i], h, guides[i])
        return self.head(h)

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        """Refine latent ``x`` ``(B, C, H, W)`` under guidance ``g`` ``(B, 1, H, W)``."""
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeMismatchError(f"refiner branch {self.tag} expects (B, {self.channels}, H, W), got {tuple(x.shape)}")
        if g.shape != (x.shape[0], 1) + tuple(x.shape[-2:]):
            raise ShapeMismatchError(f"guidance {tuple(g.shape)} is not aligned with {tuple(x.shape)}")
        h, w = x.shape[-2:]
        step = 2 ** (SCALES - 1)
        pad_h, pad_w = (-h) % step, (-w) % step
        if pad_h or pad_w:
            mode = "reflect" if pad_h < h and pad_w < w else "replicate"
            xp = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)
            gp = F.pad(g, (0, pad_w, 0, pad_h), mode=mode)
            return x + self.correction(xp, gp)[..., :h, :w]
        return x + self.correction(x, g)
