"""Pretext and downstream losses (torch, differentiable)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import EmptyMask, LabelOutOfRange, LengthMismatch, ShapeMismatch


@dataclass
class LossBreakdown:
    total: torch.Tensor
    coord_term: torch.Tensor
    pen_term: torch.Tensor
    valid_steps: int

    def as_floats(self) -> dict:
        return {
            "total": float(self.total),
            "coord_term": float(self.coord_term),
            "pen_term": float(self.pen_term),
            "valid_steps": self.valid_steps,
        }


def vectorization_loss(preds, targets, mask, coord_error: str = "squared") -> LossBreakdown:
    """Coordinate regression plus pen-state cross-entropy over unmasked steps.

    ``preds``/``targets`` are ``(..., T, 5)``; target pen columns are one-hot.
    Both terms are averaged over the number of unmasked steps in the batch.
    ``coord_error="absolute"`` swaps squared for absolute coordinate error.
    """
    if preds.shape != targets.shape:
        raise LengthMismatch(f"predictions {tuple(preds.shape)} vs targets {tuple(targets.shape)}")
    if mask.shape != preds.shape[:-1]:
        raise LengthMismatch(f"mask {tuple(mask.shape)} vs steps {tuple(preds.shape[:-1])}")
    mask = mask.to(preds.dtype)
    n_valid = mask.sum()
    if float(n_valid) <= 0:
        raise EmptyMask("no unmasked steps")
    keep = mask > 0
    # zero masked steps before any arithmetic so their values (even NaN) get exactly zero gradient
    preds = torch.where(keep.unsqueeze(-1), preds, torch.zeros_like(preds))
    diff = preds[..., :2] - targets[..., :2]
    err = diff.pow(2) if coord_error == "squared" else diff.abs()
    coord = torch.where(keep, err.sum(-1), torch.zeros_like(mask)).sum() / n_valid
    logp = F.log_softmax(preds[..., 2:], dim=-1)
    ce = -(targets[..., 2:] * logp).sum(-1)
    pen = torch.where(keep, ce, torch.zeros_like(mask)).sum() / n_valid
    return LossBreakdown(coord + pen, coord, pen, int(round(float(n_valid))))


def pen_accuracy(preds, targets, mask) -> float:
    hit = (preds[..., 2:].argmax(-1) == targets[..., 2:].argmax(-1)).to(mask.dtype)
    return float((hit * mask).sum() / mask.sum())


def rasterization_loss(pred, target) -> torch.Tensor:
    """Mean squared pixel error."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return (pred - target).pow(2).mean()


def classification_loss(logits, labels) -> torch.Tensor:
    """Softmax cross-entropy averaged over the batch."""
    k = logits.shape[-1]
    if torch.any(labels < 0) or torch.any(labels >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return F.cross_entropy(logits, labels)


def triplet_loss(anchor, positive, negative, margin: float = 0.2) -> torch.Tensor:
    """Mean hinge ``max(0, |a-p| - |a-n| + margin)`` with Euclidean distances."""
    if not (anchor.shape == positive.shape == negative.shape):
        raise ShapeMismatch("anchor, positive and negative must share a shape")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    d_ap = torch.linalg.vector_norm(anchor - positive, dim=-1)
    d_an = torch.linalg.vector_norm(anchor - negative, dim=-1)
    return F.relu(d_ap - d_an + margin).mean()
