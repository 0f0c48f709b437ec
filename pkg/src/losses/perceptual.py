"""
Enhancement loss: L1 in the log domain plus a feature-space term.

Feature extractors are frozen module stacks returning one tensor per stage.
The default is a fixed random convolution stack generated from a constant
seed, so the same weights come back on every CPU. A pretrained VGG-16 stack
can be plugged in when torchvision and its weights are available.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from src.core.errors import ConfigError, ShapeMismatchError

EXTRACTOR_SEED = 20240611
_missing_logged = False


@dataclass
class EnhanceLossTerms:
    l1: torch.Tensor
    perceptual: torch.Tensor
    total: torch.Tensor
    lambda_p: float
    perceptual_available: bool = True

    def as_floats(self) -> Dict[str, float]:
        return {"l1": self.l1.detach().item(), "perceptual": self.perceptual.detach().item()}


class FeatureExtractor(nn.Module):
    """Frozen stack of stages; ``forward`` returns every stage's output."""

    def __init__(self, stages: List[nn.Module]):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        for param in self.parameters():
            param.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # stays in eval mode
        return super().train(False)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class RandomFeatureExtractor(FeatureExtractor):
    """Three conv/ReLU stages (16, 32, 64 channels, the last two strided)."""

    WIDTHS = (16, 32, 64)

    def __init__(self, seed: int = EXTRACTOR_SEED):
        generator = torch.Generator(device="cpu")
        generator.manual_seed(seed)
        stages = []
        c_in = 3
        for i, c_out in enumerate(self.WIDTHS):
            conv = nn.Conv2d(c_in, c_out, kernel_size=3, stride=1 if i == 0 else 2, padding=1)
            fan_in = c_in * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            stages.append(nn.Sequential(conv, nn.ReLU()))
            c_in = c_out
        super().__init__(stages)


class VGGFeatureExtractor(FeatureExtractor):
    """relu1_2, relu2_2 and relu3_3 of an ImageNet VGG-16 (needs torchvision)."""

    CUTS = (4, 9, 16)

    def __init__(self):
        from torchvision.models import VGG16_Weights, vgg16

        features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        bounds = (0,) + self.CUTS
        stages = [features[bounds[i]:bounds[i + 1]] for i in range(len(self.CUTS))]
        super().__init__(stages)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        # log images are mapped back to pixels before ImageNet normalization
        pixels = torch.expm1(x).clamp(0.0, 1.0)
        return super().forward((pixels - self.mean) / self.std)


def build_extractor(kind: str) -> Optional[FeatureExtractor]:
    """Extractor by config name; None when it cannot be built."""
    if kind == "random":
        return RandomFeatureExtractor()
    if kind == "none":
        return None
    if kind == "vgg":
        try:
            return VGGFeatureExtractor()
        except Exception as e:
            logger.warning(f"VGG feature extractor unavailable ({str(e)}); perceptual term disabled")
            return None
    raise ConfigError(f"unknown perceptual extractor '{kind}'")


def perceptual_distance(extractor: FeatureExtractor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean over stages of the per-stage feature MSE."""
    feats_a, feats_b = extractor(a), extractor(b)
    terms = [F.mse_loss(fa, fb) for fa, fb in zip(feats_a, feats_b)]
    return torch.stack(terms).mean()


def enhance_loss(s_en: torch.Tensor, s_n: torch.Tensor, lambda_p: float, extractor: Optional[FeatureExtractor]) -> EnhanceLossTerms:
    """mean |S_en - S_n| + λp · perceptual distance."""
    global _missing_logged
    if s_en.shape != s_n.shape:
        raise ShapeMismatchError(f"enhanced {tuple(s_en.shape)} and target {tuple(s_n.shape)} differ")
    l1 = (s_en - s_n).abs().mean()
    if extractor is None:
        if not _missing_logged:
            logger.warning("No feature extractor available; enhancement loss runs without the perceptual term")
            _missing_logged = True
        zero = l1.new_zeros(())
        return EnhanceLossTerms(l1, zero, l1, lambda_p, perceptual_available=False)
    perceptual = perceptual_distance(extractor, s_en, s_n)
    return EnhanceLossTerms(l1, perceptual, l1 + lambda_p * perceptual, lambda_p)
