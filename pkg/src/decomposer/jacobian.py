"""
Back-propagation coefficients of the combination node.

For the additive rule the Jacobian of R + L with respect to either part is
the identity wherever it is evaluated. For the multiplicative rule it is
diag(partner), so gradients scale with the other component. The diagnostic
measures both partials three ways: closed-form rule, autograd and central
finite differences.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Union

import torch

from .strategy import DecompositionStrategy, LatentComponents

FD_STEP = 1e-4
MAX_ELEMENTS = 256


@dataclass
class JacobianReport:
    strategy: DecompositionStrategy
    analytic: Dict[str, torch.Tensor]
    autograd: Dict[str, torch.Tensor]
    numeric: Dict[str, torch.Tensor]
    offdiag_max: float
    max_discrepancy: float
    identity_exact: bool

    def summary(self) -> Dict[str, Union[str, float, bool]]:
        return {
            "strategy": self.strategy.value,
            "offdiag_max": self.offdiag_max,
            "max_discrepancy": self.max_discrepancy,
            "identity_exact": self.identity_exact,
        }


def combine_fn(strategy: DecompositionStrategy) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    if strategy.additive:
        return lambda r, l: r + l
    return lambda r, l: r * l


def _full_jacobians(fn, r: torch.Tensor, l: torch.Tensor):
    jr, jl = torch.autograd.functional.jacobian(lambda a, b: fn(a, b).reshape(-1), (r, l))
    n = r.numel()
    return jr.reshape(n, n), jl.reshape(n, n)


def _finite_difference(fn, r: torch.Tensor, l: torch.Tensor, wrt: int, step: float) -> torch.Tensor:
    """Central-difference Jacobian, one column per perturbed element."""
    args = [r.clone(), l.clone()]
    target = args[wrt].view(-1)
    n = target.numel()
    jac = torch.empty(n, n, dtype=r.dtype)
    for j in range(n):
        original = float(target[j])
        target[j] = original + step
        plus = fn(*args).reshape(-1)
        target[j] = original - step
        minus = fn(*args).reshape(-1)
        target[j] = original
        jac[:, j] = (plus - minus) / (2 * step)
    return jac


def jacobian_diagnostic(strategy, point: LatentComponents, step: float = FD_STEP) -> JacobianReport:
    """
    Evaluate d(combine)/dR and d(combine)/dL at ``point``.

    An illumination part with fewer channels (the clipped pixel variant's
    single channel) is expanded to the reflectance shape first, so every
    Jacobian is square and elementwise.

    Raises:
        ValueError: for points larger than 256 elements.
    """
    strategy = DecompositionStrategy.parse(strategy)
    r = point.R.detach().to(torch.float64)
    l = point.L.detach().to(torch.float64).expand_as(r).contiguous()
    if r.numel() > MAX_ELEMENTS:
        raise ValueError(f"diagnostic points are limited to {MAX_ELEMENTS} elements, got {r.numel()}")

    fn = combine_fn(strategy)
    if strategy.additive:
        analytic = {"R": torch.ones_like(r), "L": torch.ones_like(l)}
    else:
        analytic = {"R": l.clone(), "L": r.clone()}

    jr, jl = _full_jacobians(fn, r, l)
    nr = _finite_difference(fn, r, l, 0, step)
    nl = _finite_difference(fn, r, l, 1, step)

    def diag(j: torch.Tensor) -> torch.Tensor:
        return torch.diagonal(j).reshape(r.shape)

    eye = torch.eye(r.numel(), dtype=r.dtype)
    offdiag = max(float((j * (1 - eye)).abs().max()) for j in (jr, jl, nr, nl))

    discrepancy = 0.0
    for name, numeric in (("R", nr), ("L", nl)):
        full_analytic = torch.diag(analytic[name].reshape(-1))
        scale = max(1.0, float(full_analytic.abs().max()))
        discrepancy = max(discrepancy, float((full_analytic - numeric).abs().max()) / scale)

    return JacobianReport(
        strategy=strategy,
        analytic=analytic,
        autograd={"R": diag(jr), "L": diag(jl)},
        numeric={"R": diag(nr), "L": diag(nl)},
        offdiag_max=offdiag,
        max_discrepancy=discrepancy,
        identity_exact=bool(torch.equal(jr, eye) and torch.equal(jl, eye)),
    )
