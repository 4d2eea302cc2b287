"""Auxiliary table reconstruction: mask cells of the table encoding and
restore them with a two-layer MLP under a mean-squared-error loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .optim import Adam

PASSES = ("both", "first", "second")
STAGES = ("e1", "e2")


@dataclass
class TrConfig:
    enabled: bool = False
    rho: float = 0.15
    lam: float = 1e-2
    hidden: int = 0  # 0 means "same as model width"
    passes: str = "both"
    masked_only: bool = True
    # "e1": mask pooled cells before the cross-cell attention, so a masked cell
    # is rebuilt from its neighbours; "e2": mask the final encoding directly
    mask_stage: str = "e1"

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.passes not in PASSES:
            raise ValueError(f"tr pass must be one of {PASSES}, got {self.passes!r}")
        if self.mask_stage not in STAGES:
            raise ValueError(f"tr mask_stage must be one of {STAGES}, got {self.mask_stage!r}")

    def active_for(self, pass_index: int) -> bool:
        if not self.enabled:
            return False
        return self.passes == "both" or self.passes == ("first", "second")[pass_index - 1]


def mask_cells(e2: Tensor, rho: float, rng: np.random.Generator) -> Tuple[Tensor, np.ndarray]:
    """Zero out ``ceil(rho * m * n)`` distinct cells chosen uniformly.

    Returns the masked tensor (still differentiable w.r.t. ``e2`` on the kept
    cells) and the boolean ``[m, n]`` mask of replaced cells.
    """
    m, n = e2.shape[:2]
    total = m * n
    k = math.ceil(rho * total - 1e-12)
    if k >= total:
        raise ValueError(f"rho={rho} would mask all {total} cells")
    mask = np.zeros(total, dtype=bool)
    if k:
        mask[rng.choice(total, size=k, replace=False)] = True
    mask = mask.reshape(m, n)
    keep = (~mask).astype(np.float64)[..., None]
    return ag.mul(e2, keep), mask


class ReconstructionHead:
    """``d -> hidden -> d`` MLP applied to every cell vector."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, std: float = 0.02,
                 activation: Callable[[Tensor], Tensor] = ag.gelu):
        self.d, self.hidden = d, hidden
        self.activation = activation
        self.params: Dict[str, Tensor] = {
            "w1": ag.parameter(rng.normal(0.0, std, size=(d, hidden))),
            "b1": ag.parameter(np.zeros(hidden)),
            "w2": ag.parameter(rng.normal(0.0, std, size=(hidden, d))),
            "b2": ag.parameter(np.zeros(d)),
        }

    def parameters(self):
        return list(self.params.values())

    def __call__(self, e2_masked: Tensor) -> Tensor:
        return reconstruct(e2_masked, self.params, self.activation)


def reconstruct(e2_masked: Tensor, mlp_params: Dict[str, Tensor],
                activation: Callable[[Tensor], Tensor] = ag.gelu) -> Tensor:
    w1, b1, w2, b2 = (mlp_params[k] for k in ("w1", "b1", "w2", "b2"))
    d = e2_masked.shape[-1]
    if w1.shape[0] != d or w2.shape != (w1.shape[1], d):
        raise ag.ShapeError(f"MLP widths {w1.shape}/{w2.shape} do not fit cell width {d}")
    return activation(e2_masked @ w1 + b1) @ w2 + b2


def tr_loss(e2_hat: Tensor, e2_clean, mask: np.ndarray, masked_only: bool = True) -> Tensor:
    """MSE over the masked cells' components (or the whole table)."""
    target = ag.as_tensor(e2_clean.values if isinstance(e2_clean, Tensor) else e2_clean)
    if e2_hat.shape != target.shape:
        raise ag.ShapeError(f"reconstruction {e2_hat.shape} vs target {target.shape}")
    if not masked_only:
        return ag.mse(e2_hat, target)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum()) * e2_hat.shape[-1]
    if count == 0:
        return ag.scale(ag.sum_(e2_hat), 0.0)
    weights = mask.astype(np.float64)[..., None]
    diff = ag.sub(e2_hat, target)
    return ag.scale(ag.sum_(ag.mul(ag.mul(diff, diff), weights)), 1.0 / count)


def combined_loss(lm: Tensor, tr: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ag.add(lm, ag.scale(tr, lam))


def corrupt(source: Tensor, rho: float, rng: np.random.Generator,
            context: Optional[Callable[[Tensor], Tensor]] = None) -> Tuple[Tensor, np.ndarray]:
    """Mask cells of ``source`` and optionally pass the result through ``context``."""
    masked, mask = mask_cells(source, rho, rng)
    return (context(masked) if context is not None else masked), mask


def fit_reconstruction(target, head: ReconstructionHead, rho: float, lam: float, steps: int,
                       rng: np.random.Generator, lr: float = 3e-5, resample: bool = True,
                       source=None, context=None) -> list:
    """Train only ``head`` to restore masked cells of a fixed ``target`` encoding.

    Cells of ``source`` (default: the target itself) are masked and mapped by
    ``context`` before the head sees them.  A fresh mask is drawn every step
    unless ``resample`` is false.  Returns the per-step TRLoss values (before
    each update).
    """
    clean = ag.as_tensor(target.values if isinstance(target, Tensor) else target)
    source = clean if source is None else source
    opt = Adam(head.parameters(), lr=lr)
    history = []
    with ag.no_grad():
        masked, mask = corrupt(source, rho, rng, context)
    for _ in range(steps):
        if resample:
            with ag.no_grad():
                masked, mask = corrupt(source, rho, rng, context)
        opt.zero_grad()
        loss = tr_loss(head(masked), clean, mask)
        ag.scale(loss, lam).backward()
        opt.step()
        history.append(loss.item())
    return history


def masked_mse(target, head: ReconstructionHead, rho: float, rng: np.random.Generator,
               trials: int = 50, source=None, context=None) -> float:
    """Average masked-cell MSE over ``trials`` random masks (no gradients)."""
    clean = ag.as_tensor(target.values if isinstance(target, Tensor) else target)
    source = clean if source is None else source
    with ag.no_grad():
        vals = []
        for _ in range(trials):
            masked, mask = corrupt(source, rho, rng, context)
            vals.append(tr_loss(head(masked), clean, mask).item())
    return float(np.mean(vals))
