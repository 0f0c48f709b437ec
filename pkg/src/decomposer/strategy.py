"""
Decomposition strategies: the full method and its ablation variants.
"""

from dataclasses import dataclass
from enum import Enum

import torch

from src.core.errors import ConfigError


class DecompositionStrategy(str, Enum):
    FULL = "full"
    V0_PIXEL_MULT = "v0_pixel_mult"
    V1_LATENT_MULT = "v1_latent_mult"
    V2_LATENT_ADD_NOLOG = "v2_latent_add_nolog"
    V3_RGB_ADD_LOG = "v3_rgb_add_log"

    @classmethod
    def parse(cls, value) -> "DecompositionStrategy":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for member in cls:
            # short forms such as "v1" are accepted on the command line
            if text in (member.value, member.value.split("_")[0]):
                return member
        raise ConfigError(f"unknown strategy '{value}'; choose from {', '.join(m.value for m in cls)}")

    @property
    def combine(self) -> str:
        return _TRAITS[self][0]

    @property
    def space(self) -> str:
        return _TRAITS[self][1]

    @property
    def log_transform(self) -> bool:
        return _TRAITS[self][2]

    @property
    def additive(self) -> bool:
        return self.combine == "additive"


_TRAITS = {
    DecompositionStrategy.FULL: ("additive", "latent", True),
    DecompositionStrategy.V0_PIXEL_MULT: ("multiplicative", "pixel", False),
    DecompositionStrategy.V1_LATENT_MULT: ("multiplicative", "latent", False),
    DecompositionStrategy.V2_LATENT_ADD_NOLOG: ("additive", "latent", False),
    DecompositionStrategy.V3_RGB_ADD_LOG: ("additive", "pixel", True),
}


@dataclass
class LatentComponents:
    """Reflectance and illumination parts, ``(B, C, H, W)`` each."""

    R: torch.Tensor
    L: torch.Tensor
    strategy: DecompositionStrategy

    def replace(self, R: torch.Tensor = None, L: torch.Tensor = None) -> "LatentComponents":
        return LatentComponents(self.R if R is None else R, self.L if L is None else L, self.strategy)
