"""
Decomposition losses: reconstruction, structure-aware smoothness and
reflectance consistency. All norms are mean-reduced so the weights carry over
between patch sizes.
"""

from dataclasses import dataclass
from typing import Callable, Dict

import torch
from loguru import logger

from src.core.errors import ShapeMismatchError
from src.decomposer.strategy import LatentComponents

_alpha_signs_logged = set()


@dataclass
class DecomLossTerms:
    recon: torch.Tensor
    is_smooth: torch.Tensor
    ir_consistency: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float
    alpha_smooth: float

    def as_floats(self) -> Dict[str, float]:
        return {
            "recon": self.recon.detach().item(),
            "smooth": self.is_smooth.detach().item(),
            "consistency": self.ir_consistency.detach().item(),
        }


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def recon_loss(
    parts_l: LatentComponents,
    parts_n: LatentComponents,
    s_l: torch.Tensor,
    s_n: torch.Tensor,
    reconstruct: Callable[[LatentComponents], torch.Tensor],
) -> torch.Tensor:
    """Sum over both images of mean |f_rec(R_i, L_i) - S_i|; no cross terms."""
    total = s_l.new_zeros(())
    for parts, target in ((parts_l, s_l), (parts_n, s_n)):
        out = reconstruct(parts)
        _same_shape(out, target, "reconstruction and target differ")
        total = total + (out - target).abs().mean()
    return total


def _log_alpha_sign(alpha: float) -> None:
    positive = alpha > 0
    if positive in _alpha_signs_logged:
        return
    _alpha_signs_logged.add(positive)
    if positive:
        logger.warning(f"smoothness exponent alpha={alpha} > 0 penalizes smoothness at reflectance edges")
    else:
        logger.debug(f"smoothness uses exp(alpha*|grad R|) with alpha={alpha}, the edge-aware sign")


def _direction_term(dl: torch.Tensor, dr: torch.Tensor, alpha: float) -> torch.Tensor:
    if dl.numel() == 0:
        return dl.new_zeros(())
    return (dl.abs() * torch.exp(alpha * dr.abs())).mean()


def smoothness_loss(R: torch.Tensor, L: torch.Tensor, alpha_smooth: float) -> torch.Tensor:
    """
    mean |∇L| · exp(α |∇R|) over horizontal and vertical forward differences.

    R is reduced to its channel mean; differences cover the valid region of
    each direction, and the two directions are averaged separately and summed.
    """
    if R.shape[-2:] != L.shape[-2:] or R.shape[0] != L.shape[0]:
        raise ShapeMismatchError(f"R {tuple(R.shape)} and L {tuple(L.shape)} are not aligned")
    _log_alpha_sign(alpha_smooth)
    r = R.mean(dim=1, keepdim=True)
    dl_x = L[..., :, 1:] - L[..., :, :-1]
    dr_x = r[..., :, 1:] - r[..., :, :-1]
    dl_y = L[..., 1:, :] - L[..., :-1, :]
    dr_y = r[..., 1:, :] - r[..., :-1, :]
    return _direction_term(dl_x, dr_x, alpha_smooth) + _direction_term(dl_y, dr_y, alpha_smooth)


def reflectance_consistency(R_l: torch.Tensor, R_n: torch.Tensor) -> torch.Tensor:
    _same_shape(R_l, R_n, "reflectance parts differ")
    return (R_l - R_n).abs().mean()


def decom_loss(
    parts_l: LatentComponents,
    parts_n: LatentComponents,
    s_l: torch.Tensor,
    s_n: torch.Tensor,
    reconstruct: Callable[[LatentComponents], torch.Tensor],
    lambda1: float,
    lambda2: float,
    alpha_smooth: float,
) -> DecomLossTerms:
    """Full decomposition objective over a low/normal pair."""
    recon = recon_loss(parts_l, parts_n, s_l, s_n, reconstruct)
    smooth = smoothness_loss(parts_l.R, parts_l.L, alpha_smooth) + smoothness_loss(parts_n.R, parts_n.L, alpha_smooth)
    consistency = reflectance_consistency(parts_l.R, parts_n.R)
    total = recon + lambda1 * smooth + lambda2 * consistency
    return DecomLossTerms(recon, smooth, consistency, total, lambda1, lambda2, alpha_smooth)
