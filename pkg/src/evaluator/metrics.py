"""
Full-reference image quality metrics on [0, 1] RGB floats.

Both metrics are computed in float64 on the values as given, without 8-bit
re-quantization.
"""

import math

import torch
import torch.nn.functional as F

from src.core.errors import ShapeMismatchError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _aligned(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare images of shape {tuple(a.shape)} and {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """10·log10(1 / MSE) in dB with peak 1.0, capped at 99 dB."""
    _aligned(a, b)
    mse = float(((a.detach().double() - b.detach().double()) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    Mean SSIM over valid 11×11 Gaussian windows (σ=1.5), per channel, averaged.

    Accepts ``(H, W)``, ``(C, H, W)`` or ``(B, C, H, W)``.
    """
    _aligned(a, b)
    if a.dim() < 2:
        raise ShapeMismatchError(f"ssim needs at least two dimensions, got {tuple(a.shape)}")
    h, w = a.shape[-2:]
    if min(h, w) < SSIM_WINDOW:
        raise ShapeMismatchError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = a.detach().double().reshape(-1, 1, h, w)
    y = b.detach().double().reshape(-1, 1, h, w)
    window = gaussian_window().view(1, 1, SSIM_WINDOW, SSIM_WINDOW)
    c1, c2 = SSIM_K1**2, SSIM_K2**2

    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x**2
    var_y = F.conv2d(y * y, window) - mu_y**2
    cov = F.conv2d(x * y, window) - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return float(ssim_map.mean(dim=(-2, -1)).mean())
