"""Differentiable adaptive weighted cross-entropy.

Same selection rule as the reference evaluator that produced the weight
files: a pixel is charged through the background channel when
w_bck >= w_obj * m_d, through the object channel otherwise, each weighted by
its plane.  Probabilities are clamped at 1e-12 before the log, which keeps
the gradient defined everywhere.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError
from .formats import WeightPlanes

PROBABILITY_CLAMP = 1e-12


def _as_tensor(plane: np.ndarray | torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    tensor = torch.as_tensor(plane, dtype=like.dtype, device=like.device)
    if tensor.dim() == 2:
        tensor = tensor.unsqueeze(0)
    return tensor


def adaptive_loss(
    logits: torch.Tensor,
    w_bck: np.ndarray | torch.Tensor,
    w_obj: np.ndarray | torch.Tensor,
    m_d: np.ndarray | torch.Tensor,
    *,
    reduction: str = "sum",
) -> torch.Tensor:
    """Loss over (batch, 2, H, W) logits with (batch?, H, W) weight planes.

    2-D planes broadcast over the batch; ``reduction`` is "sum" (matches the
    reference evaluator's total) or "mean" (per-pixel average, the training
    default's building block).
    """
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise ShapeError(f"expected (batch, 2, H, W) logits, got {tuple(logits.shape)}")
    if reduction not in ("sum", "mean"):
        raise ShapeError(f"reduction must be 'sum' or 'mean', got {reduction!r}")

    w_bck = _as_tensor(w_bck, logits)
    w_obj = _as_tensor(w_obj, logits)
    m_d = _as_tensor(m_d, logits)
    spatial = logits.shape[2:]
    for name, plane in (("w_bck", w_bck), ("w_obj", w_obj), ("m_d", m_d)):
        if plane.shape[-2:] != spatial:
            raise ShapeError(
                f"{name} plane {tuple(plane.shape[-2:])} does not match logits {tuple(spatial)}"
            )

    probabilities = torch.softmax(logits, dim=1).clamp(min=PROBABILITY_CLAMP)
    background = w_bck >= w_obj * m_d
    per_pixel = torch.where(
        background,
        w_bck * -torch.log(probabilities[:, 0]),
        w_obj * -torch.log(probabilities[:, 1]),
    )
    return per_pixel.sum() if reduction == "sum" else per_pixel.mean()


def loss_from_planes(
    logits: torch.Tensor, planes: WeightPlanes, *, reduction: str = "sum"
) -> torch.Tensor:
    """Convenience wrapper for a single slice's loaded weight file."""
    return adaptive_loss(
        logits, planes.w_bck, planes.w_obj, planes.m_d, reduction=reduction
    )
