"""
Seeded weight initialization.

All randomness goes through an explicit ``torch.Generator`` so that several
training runs can live in one process without sharing generator state.
"""

import torch
from torch import nn

PROJECTION_STD = 0.02


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed))
    return generator


def zero_init(layer: nn.Module) -> nn.Module:
    """Mark a layer as a residual output head that starts at exactly zero."""
    layer.zero_init = True
    return layer


@torch.no_grad()
def initialize_weights(module: nn.Module, generator: torch.Generator, std: float = PROJECTION_STD) -> nn.Module:
    """
    Re-initialize every parameter of ``module``.

    Convolutions and linear layers get a truncated normal (±2σ), biases zero,
    layers flagged with :func:`zero_init` all zeros. Modules holding other
    parameters (norm scales, temperatures) reset them in
    ``reset_custom_parameters``.
    """
    for sub in module.modules():
        if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if getattr(sub, "zero_init", False):
                sub.weight.zero_()
            else:
                nn.init.trunc_normal_(sub.weight, mean=0.0, std=std, a=-2 * std, b=2 * std, generator=generator)
            if sub.bias is not None:
                sub.bias.zero_()
    # second pass so custom resets see the final conv weights
    for sub in module.modules():
        reset = getattr(sub, "reset_custom_parameters", None)
        if callable(reset):
            reset()
    return module


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
