"""Objective terms: L1 reconstruction, contrast-assisted reconstruction loss
over frozen features, student/teacher consistency, and their weighted sum.

The contrastive term is a temperature-scaled softmax over L1 feature
distances, computed through a numerically stable log-sum-exp so large
distances never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .percep import FeaturePyramid, layer_distance


@dataclass(frozen=True)
class CarlConfig:
    tau: float = 0.5
    k: int = 5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive: {self.tau}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1: {self.k}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # consistency
    lambda2: float = 10.0  # contrastive

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weights must be finite and >= 0: {v}")


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    carl: float
    consistency: float
    total: float

    def to_record(self, step: int, lr: float) -> dict:
        return {
            "step": step,
            "rec": self.rec,
            "carl": self.carl,
            "cr": self.consistency,
            "total": self.total,
            "lr": lr,
        }


def rec_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def carl_layer(d_pos, d_negs, tau: float) -> torch.Tensor:
    """-log softmax of the positive among K+1 negated, temperature-scaled
    distances: log-sum-exp(logits) - logit_pos with logits = -d / tau."""
    if tau <= 0:
        raise ValueError(f"tau must be positive: {tau}")
    if len(d_negs) == 0:
        raise ValueError("empty negative list")
    d_pos = torch.as_tensor(d_pos, dtype=torch.float64) if not torch.is_tensor(d_pos) else d_pos
    negs = [
        torch.as_tensor(d, dtype=d_pos.dtype) if not torch.is_tensor(d) else d
        for d in d_negs
    ]
    logits = torch.stack([-d_pos / tau] + [-d / tau for d in negs])
    return torch.logsumexp(logits, dim=0) + d_pos / tau


def carl_total(
    anchor: FeaturePyramid,
    positive: FeaturePyramid,
    negatives: list,
    cfg: CarlConfig,
    weights,
) -> torch.Tensor:
    """Weighted sum of per-layer contrastive terms over the pyramid.

    Positive and negative branches are detached: only the anchor path
    carries gradient.
    """
    if len(negatives) != cfg.k:
        raise ValueError(f"expected {cfg.k} negatives, got {len(negatives)}")
    m_layers = len(anchor.maps)
    if len(positive.maps) != m_layers or any(len(n.maps) != m_layers for n in negatives):
        raise ValueError("pyramid depth mismatch")
    weights = list(weights)
    if len(weights) != m_layers:
        raise ValueError("layer weight count mismatch")
    pos_det = FeaturePyramid([t.detach() for t in positive.maps])
    negs_det = [FeaturePyramid([t.detach() for t in n.maps]) for n in negatives]
    total = None
    for m in range(m_layers):
        d_pos = layer_distance(anchor, pos_det, m)
        d_negs = [layer_distance(anchor, n, m) for n in negs_det]
        term = weights[m] * carl_layer(d_pos, d_negs, cfg.tau)
        total = term if total is None else total + term
    return total


def consistency_loss(student_out: torch.Tensor, teacher_out: torch.Tensor) -> torch.Tensor:
    """Mean absolute student/teacher output difference; teacher side detached."""
    if student_out.shape != teacher_out.shape:
        raise ValueError("shape mismatch")
    return (student_out - teacher_out.detach()).abs().mean()


def total_loss(rec, consistency, carl, w: LossWeights):
    """total = rec + lambda1 * consistency + lambda2 * carl.

    Returns (total tensor-or-float, LossBreakdown of detached scalars).
    """
    total = rec + w.lambda1 * consistency + w.lambda2 * carl
    vals = []
    for v in (rec, carl, consistency):
        f = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(f):
            raise FloatingPointError(f"non-finite loss term: {f}")
        vals.append(f)
    # breakdown total recomposed from the logged scalars so the identity
    # total == rec + l1*cr + l2*carl holds exactly in the report
    total_f = vals[0] + w.lambda1 * vals[2] + w.lambda2 * vals[1]
    if not math.isfinite(total_f):
        raise FloatingPointError(f"non-finite total loss: {total_f}")
    return total, LossBreakdown(rec=vals[0], carl=vals[1], consistency=vals[2], total=total_f)
