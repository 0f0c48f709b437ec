"""
Pixel-domain transforms.

Images are channel-first tensors ``(..., 3, H, W)`` holding intensities in
[0, 1]. The log domain uses a one-pixel offset, ``S = ln(1 + I)``, so every
valid image maps into [0, ln 2] without blowing up on dark pixels.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from src.core.errors import ImageRangeError, ShapeMismatchError

LN2 = math.log(2.0)
RANGE_TOLERANCE = 1e-6
GUIDANCE_KINDS = ("prior_p", "mean", "max")


@dataclass(frozen=True)
class GuidanceMap:
    """Single-channel map ``(..., 1, H, W)`` derived from a log image."""

    data: torch.Tensor
    kind: str

    def __post_init__(self):
        if self.kind not in GUIDANCE_KINDS:
            raise ValueError(f"unknown guidance kind '{self.kind}'")


def to_float_image(data) -> torch.Tensor:
    """Convert numpy/tensor pixels to float32, dividing 8-bit data by 255."""
    if isinstance(data, np.ndarray):
        data = torch.from_numpy(np.ascontiguousarray(data))
    if not isinstance(data, torch.Tensor):
        raise TypeError(f"expected a tensor or array, got {type(data).__name__}")
    if data.dtype == torch.uint8:
        return data.to(torch.float32) / 255.0
    if not data.is_floating_point():
        raise ImageRangeError(f"unsupported pixel dtype {data.dtype}")
    return data


def _check_layout(img: torch.Tensor, name: str) -> None:
    if img.dim() < 3 or img.shape[-3] != 3:
        raise ShapeMismatchError(f"{name} must be (..., 3, H, W), got {tuple(img.shape)}")
    if img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ShapeMismatchError(f"{name} must have H >= 1 and W >= 1")


def _check_finite(t: torch.Tensor, name: str) -> None:
    if not torch.isfinite(t).all():
        raise ImageRangeError(f"{name} contains non-finite values")


def validate_pixels(img, name: str = "image") -> torch.Tensor:
    """
    Return a valid pixel image.

    Values within 1e-6 outside [0, 1] are clamped; anything further out, or
    non-finite, is rejected.
    """
    img = to_float_image(img)
    _check_layout(img, name)
    _check_finite(img, name)
    lo, hi = float(img.min()), float(img.max())
    if lo < -RANGE_TOLERANCE or hi > 1.0 + RANGE_TOLERANCE:
        raise ImageRangeError(f"{name} values span [{lo:.6g}, {hi:.6g}], outside [0, 1]")
    return img.clamp(0.0, 1.0)


def log_forward(img) -> torch.Tensor:
    """S = ln(1 + I)."""
    return torch.log1p(validate_pixels(img))


def log_inverse(s: torch.Tensor) -> torch.Tensor:
    """I = clamp(exp(S) - 1, 0, 1)."""
    _check_finite(s, "log image")
    return torch.expm1(s).clamp(0.0, 1.0)


def illumination_prior(s: torch.Tensor) -> GuidanceMap:
    """Per-pixel channel maximum, the brightest channel as an illumination estimate."""
    return GuidanceMap(s.amax(dim=-3, keepdim=True), "prior_p")


def guidance_mean(s: torch.Tensor) -> GuidanceMap:
    return GuidanceMap(s.mean(dim=-3, keepdim=True), "mean")


def guidance_max(s: torch.Tensor) -> GuidanceMap:
    return GuidanceMap(s.amax(dim=-3, keepdim=True), "max")


def guidance(s: torch.Tensor, kind: str) -> GuidanceMap:
    """Guidance by config name: ``mean`` or ``max``."""
    if kind == "mean":
        return guidance_mean(s)
    if kind == "max":
        return guidance_max(s)
    raise ValueError(f"unknown guidance '{kind}'")
