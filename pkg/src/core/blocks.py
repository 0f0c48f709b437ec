"""
Transformer building blocks shared by the decomposer and the refiner.

Feature maps are channel-first ``(B, C, H, W)``. Attention is computed over
channels (a C×C similarity per head) so cost stays linear in the pixel count.
"""

import math
from typing import Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from loguru import logger
from torch import nn

from .config import FUSIONS
from .errors import NumericalError, ShapeMismatchError


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of every pixel, with bias."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def reset_custom_parameters(self):
        nn.init.ones_(self.weight)
        nn.init.zeros_(self.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class GatedFeedForward(nn.Module):
    """Two 1×1 convolutions with a GELU gate in between."""

    def __init__(self, channels: int, expansion: float = 2.0):
        super().__init__()
        hidden = max(1, int(round(channels * expansion)))
        self.project_in = nn.Conv2d(channels, hidden * 2, kernel_size=1)
        self.project_out = nn.Conv2d(hidden, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1, x2 = self.project_in(x).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


def channel_attention_maps(q: torch.Tensor, k: torch.Tensor, temperature: torch.Tensor, normalize: bool, layer: str) -> torch.Tensor:
    """
    Row-stochastic channel attention.

    Args:
        q, k: ``(B, heads, c, HW)`` projections.
        temperature: ``(heads, 1, 1)`` divisors.
        normalize: L2-normalize q and k along the spatial axis first.
        layer: Name used in the error raised for non-finite logits.

    Returns:
        ``(B, heads, c, c)`` softmax over the last axis.
    """
    if normalize:
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
    logits = (q @ k.transpose(-2, -1)) / temperature
    if not torch.isfinite(logits).all():
        raise NumericalError(f"non-finite attention logits in {layer}")
    return logits.softmax(dim=-1)


class GuidedChannelAttention(nn.Module):
    """
    Self-attention over channels plus an optional guidance branch.

    ``fusion`` selects how the single-channel guidance map enters:

    - ``cross``: a second attention map whose query is projected from the
      guidance; the two outputs are summed.
    - ``none``: self-attention only, no guidance parameters are created.
    - ``mul_v``: the projected guidance multiplies V.
    - ``mul_in``: the projected guidance multiplies the block input.
    """

    def __init__(self, channels: int, heads: int = 1, fusion: str = "cross", qk_norm: bool = True, name: str = "attention"):
        super().__init__()
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion '{fusion}'")
        if channels % heads != 0:
            raise ValueError(f"channels ({channels}) must be divisible by heads ({heads})")
        self.channels = channels
        self.heads = heads
        self.fusion = fusion
        self.qk_norm = qk_norm
        self.name = name
        self.to_q = nn.Conv2d(channels, channels, kernel_size=1)
        self.to_k = nn.Conv2d(channels, channels, kernel_size=1)
        self.to_v = nn.Conv2d(channels, channels, kernel_size=1)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        if fusion != "none":
            self.guidance_proj = nn.Conv2d(1, channels, kernel_size=3, padding=1)
        if fusion == "cross":
            self.to_g = nn.Conv2d(channels, channels, kernel_size=1)
            self.guidance_temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.reset_custom_parameters()
        self._warned_temperature = False

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def reset_custom_parameters(self):
        with torch.no_grad():
            self.temperature.fill_(math.sqrt(self.head_dim))
            if self.fusion == "cross":
                self.guidance_temperature.fill_(math.sqrt(self.head_dim))

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        return rearrange(t, "b (head c) h w -> b head c (h w)", head=self.heads)

    def _merge(self, t: torch.Tensor, h: int, w: int) -> torch.Tensor:
        return rearrange(t, "b head c (h w) -> b (head c) h w", head=self.heads, h=h, w=w)

    def _check_temperatures(self):
        if self._warned_temperature:
            return
        temps = [self.temperature]
        if self.fusion == "cross":
            temps.append(self.guidance_temperature)
        if any(bool((t <= 0).any()) for t in temps):
            logger.warning(f"{self.name}: attention temperature became non-positive")
            self._warned_temperature = True

    def guidance_features(self, g: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        if g is None:
            raise ShapeMismatchError(f"{self.name} needs a guidance map for fusion '{self.fusion}'")
        if g.shape[-2:] != like.shape[-2:] or g.shape[1] != 1:
            raise ShapeMismatchError(
                f"guidance {tuple(g.shape)} is not a single-channel map aligned with {tuple(like.shape)}"
            )
        return self.guidance_proj(g)

    def self_attention(self, x: torch.Tensor, return_maps: bool = False):
        """Y_m, optionally with its attention maps."""
        h, w = x.shape[-2:]
        q, k, v = self._split(self.to_q(x)), self._split(self.to_k(x)), self._split(self.to_v(x))
        attn = channel_attention_maps(q, k, self.temperature, self.qk_norm, f"{self.name}.self")
        y = self._merge(attn @ v, h, w)
        return (y, attn) if return_maps else y

    def guidance_attention(self, x: torch.Tensor, g: torch.Tensor, return_maps: bool = False):
        """Y_G: same keys and values, query projected from the guidance map."""
        h, w = x.shape[-2:]
        q = self._split(self.to_g(self.guidance_features(g, x)))
        k, v = self._split(self.to_k(x)), self._split(self.to_v(x))
        attn = channel_attention_maps(q, k, self.guidance_temperature, self.qk_norm, f"{self.name}.guidance")
        y = self._merge(attn @ v, h, w)
        return (y, attn) if return_maps else y

    def forward(self, x: torch.Tensor, g: Optional[torch.Tensor] = None, return_maps: bool = False):
        self._check_temperatures()
        if self.fusion == "none":
            return self.self_attention(x, return_maps)
        if self.fusion == "cross":
            y_m, a_m = self.self_attention(x, return_maps=True)
            y_g, a_g = self.guidance_attention(x, g, return_maps=True)
            y = y_m + y_g
            return (y, (a_m, a_g)) if return_maps else y

        gf = self.guidance_features(g, x)
        h, w = x.shape[-2:]
        source = x * gf if self.fusion == "mul_in" else x
        q, k = self._split(self.to_q(source)), self._split(self.to_k(source))
        v = self.to_v(source)
        if self.fusion == "mul_v":
            v = v * gf
        attn = channel_attention_maps(q, k, self.temperature, self.qk_norm, f"{self.name}.self")
        y = self._merge(attn @ self._split(v), h, w)
        return (y, attn) if return_maps else y


class GuidanceFusionBlock(nn.Module):
    """
    Norm → guided attention → residual, norm → gated FFN → residual, then a
    depthwise 3×3 positional term added on top.
    """

    def __init__(
        self,
        channels: int,
        heads: int = 1,
        ffn_expansion: float = 2.0,
        fusion: str = "cross",
        qk_norm: bool = True,
        name: str = "gftb",
    ):
        super().__init__()
        self.name = name
        self.fusion = fusion
        self.norm1 = ChannelLayerNorm(channels)
        self.attn = GuidedChannelAttention(channels, heads, fusion, qk_norm, name=f"{name}.attn")
        self.norm2 = ChannelLayerNorm(channels)
        self.ffn = GatedFeedForward(channels, ffn_expansion)
        self.pos = nn.Conv2d(channels, channels, kernel_size=3, padding=1, groups=channels)

    def finish(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Everything after the attention stage, given the attention output ``y``."""
        x = x + y
        x = x + self.ffn(self.norm2(x))
        return x + self.pos(x)

    def forward(self, x: torch.Tensor, g: Optional[torch.Tensor] = None) -> torch.Tensor:
        if x.dim() != 4:
            raise ShapeMismatchError(f"{self.name} expects (B, C, H, W), got {tuple(x.shape)}")
        out = self.finish(x, self.attn(self.norm1(x), g))
        if not torch.isfinite(out).all():
            raise NumericalError(f"non-finite activations in {self.name}")
        return out
