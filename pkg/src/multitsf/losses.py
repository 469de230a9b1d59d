"""Training objective: human-presence BCE, two-way frame and sequence losses, weighted total.

Two-way loss for one row (a sample, or a class after transposition) with
positive set P and negative set N::

    softplus( logsumexp_{n in N} x_n + gamma * logsumexp_{p in P} (-x_p / gamma) )

Rows whose P or N is empty contribute nothing and are left out of the average
(the formula's own limit: an empty log-sum-exp is -inf and softplus(-inf) = 0).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import InvalidArgumentError, NumericError

EPS = 1e-7


@dataclass
class LossWeights:
    beta1: float = 1.0  # human
    beta2: float = 1.0  # frame
    beta3: float = 1.0  # sequence
    alpha1: float = 1.0  # frame class-wise balance
    alpha2: float = 1.0  # sequence class-wise balance
    gamma_s: float = 1.0
    gamma_c: float = 1.0

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3, self.alpha1, self.alpha2) < 0:
            raise InvalidArgumentError("loss weights must be nonnegative")
        if self.gamma_s <= 0 or self.gamma_c <= 0:
            raise InvalidArgumentError("temperatures must be positive")


@dataclass
class LossBundle:
    l_h: float
    l_f_sample: float
    l_f_class: float
    l_s_sample: float
    l_s_class: float
    total: float

    def to_json(self) -> dict:
        return asdict(self)


def softplus(x: torch.Tensor) -> torch.Tensor:
    # logaddexp(x, 0) = max(x, 0) + log1p(exp(-|x|)), with the exact sigmoid gradient at 0
    return torch.logaddexp(x, torch.zeros_like(x))


def _as_pair(logits, labels):
    x = torch.as_tensor(logits)
    if not x.is_floating_point():
        x = x.double()
    y = torch.as_tensor(labels, device=x.device)
    if x.shape != y.shape or x.ndim != 2:
        raise InvalidArgumentError(f"logits {tuple(x.shape)} and labels {tuple(y.shape)} must be equal 2-D shapes")
    return x, y > 0.5


def two_way_sample_loss(logits, labels, gamma_s: float = 1.0) -> torch.Tensor:
    """Mean over rows of (S, C) ``logits`` that have both positives and negatives."""
    if not gamma_s > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma_s}")
    x, pos = _as_pair(logits, labels)
    valid = pos.any(dim=1) & (~pos).any(dim=1)
    if not bool(valid.any()):
        return (x * 0).sum()
    x, pos = x[valid], pos[valid]
    neg_lse = torch.logsumexp(x.masked_fill(pos, -math.inf), dim=1)
    pos_lse = torch.logsumexp((-x / gamma_s).masked_fill(~pos, -math.inf), dim=1)
    return softplus(neg_lse + gamma_s * pos_lse).mean()


def two_way_class_loss(logits, labels, gamma_c: float = 1.0) -> torch.Tensor:
    """Class-wise form: the sample-wise loss with samples and classes swapped."""
    x, y = _as_pair(logits, labels)
    return two_way_sample_loss(x.T, y.T, gamma_c)


def human_loss(pred, target, eps: float = EPS) -> torch.Tensor:
    """Binary cross-entropy averaged over every (view, frame); ``pred`` holds probabilities."""
    p = torch.as_tensor(pred)
    h = torch.as_tensor(target, dtype=p.dtype, device=p.device)
    if p.shape != h.shape:
        raise InvalidArgumentError(f"prediction {tuple(p.shape)} and target {tuple(h.shape)} differ")
    p = p.clamp(eps, 1 - eps)
    return -(h * p.log() + (1 - h) * (1 - p).log()).mean()


def frame_loss(frame_logits, frame_labels, weights: LossWeights) -> tuple[torch.Tensor, torch.Tensor]:
    """(sample-wise, class-wise) two-way terms with every frame of the batch pooled on one axis."""
    x = torch.as_tensor(frame_logits)
    x = x.reshape(-1, x.shape[-1])
    y = torch.as_tensor(frame_labels).reshape(x.shape)
    return two_way_sample_loss(x, y, weights.gamma_s), two_way_class_loss(x, y, weights.gamma_c)


def sequence_loss(seq_logits, seq_labels, weights: LossWeights) -> tuple[torch.Tensor, torch.Tensor]:
    return (two_way_sample_loss(seq_logits, seq_labels, weights.gamma_s),
            two_way_class_loss(seq_logits, seq_labels, weights.gamma_c))


def total_loss(l_h, l_f_sample, l_f_class, l_s_sample, l_s_class, weights: LossWeights):
    """beta1*L_H + beta2*(L_F^S + alpha1*L_F^C) + beta3*(L_S^S + alpha2*L_S^C)."""
    parts = dict(l_h=l_h, l_f_sample=l_f_sample, l_f_class=l_f_class, l_s_sample=l_s_sample, l_s_class=l_s_class)
    for name, v in parts.items():
        x = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(x):
            raise NumericError(f"{name} is not finite ({x})")
    w = weights
    return (w.beta1 * l_h
            + w.beta2 * (l_f_sample + w.alpha1 * l_f_class)
            + w.beta3 * (l_s_sample + w.alpha2 * l_s_class))


def compute_losses(out, frame_labels, seq_labels, human_mask, weights: LossWeights,
                   kind: str = "two_way") -> tuple[torch.Tensor, LossBundle]:
    """All five terms for one model output; returns the differentiable total and a float bundle.

    ``kind="bce"`` swaps both two-way losses for binary cross-entropy on sigmoid
    scores (reported in the sample-wise slots, class-wise slots are 0).
    """
    l_h = human_loss(out.human_prob, human_mask)
    if kind == "two_way":
        lfs, lfc = frame_loss(out.frame_logits, frame_labels, weights)
        lss, lsc = sequence_loss(out.seq_logits, seq_labels, weights)
    elif kind == "bce":
        zero = out.seq_logits.sum() * 0
        lfs, lfc = human_loss(torch.sigmoid(out.frame_logits), frame_labels), zero
        lss, lsc = human_loss(torch.sigmoid(out.seq_logits), seq_labels), zero
    else:
        raise InvalidArgumentError(f"unknown loss kind {kind!r}")
    total = total_loss(l_h, lfs, lfc, lss, lsc, weights)
    bundle = LossBundle(*(float(v.detach()) for v in (l_h, lfs, lfc, lss, lsc, total)))
    return total, bundle
