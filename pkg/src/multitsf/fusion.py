"""Shared temporal encoder, per-frame sensor fusion across views, and prediction heads."""

from __future__ import annotations

import torch
import torch.nn as nn

from .attention import TransformerLayer, TransformerStack, scaled_dot_attention, sinusoidal_table
from .errors import InvalidArgumentError

__all__ = [
    "FUSION_STRATEGIES",
    "TemporalEncoder",
    "SensorFusion",
    "PredictionHeads",
    "scaled_dot_attention",
]

FUSION_STRATEGIES = ("transformer", "max", "mean", "concat")


class TemporalEncoder(nn.Module):
    """Project AV features to ``dim``, add sinusoidal frame positions, then
    self-attend across the T frames of each view.

    Input (..., T, d_in) -> (..., T, dim) plus the last layer's (..., T, T) attention.
    """

    def __init__(self, d_in: int, dim: int = 128, depth: int = 2, heads: int = 4, ff_mult: int = 2):
        super().__init__()
        self.d_in = d_in
        self.proj = nn.Linear(d_in, dim)
        self.blocks = TransformerStack(dim, depth, heads, ff_mult)

    def forward(self, av: torch.Tensor):
        if av.ndim < 2 or av.shape[-1] != self.d_in or av.shape[-2] < 1:
            raise InvalidArgumentError(f"expected (..., T, {self.d_in}) features, got {tuple(av.shape)}")
        x = self.proj(av)
        x = x + sinusoidal_table(x.shape[-2], x.shape[-1], dtype=x.dtype)
        return self.blocks(x)


class SensorFusion(nn.Module):
    """Combine N views into one feature per frame.

    ``transformer``: one self-attention layer over the N view tokens of each
    frame (no view positions), then the mean of the N output tokens.
    ``max`` / ``mean``: elementwise pooling over views.
    ``concat``: concatenate the views and project back to ``dim``; the only
    strategy that depends on view order.

    Input (..., N, T, dim) -> (..., T, dim); attention (..., T, N, N) or None.
    """

    def __init__(self, dim: int, n_views: int, strategy: str = "transformer", heads: int = 4, ff_mult: int = 2):
        super().__init__()
        if strategy not in FUSION_STRATEGIES:
            raise InvalidArgumentError(f"unknown fusion strategy {strategy!r}")
        self.dim, self.n_views, self.strategy = dim, n_views, strategy
        if strategy == "transformer":
            self.layer = TransformerLayer(dim, heads, ff_mult)
        elif strategy == "concat":
            self.proj = nn.Linear(n_views * dim, dim)

    def forward(self, views: torch.Tensor):
        if views.ndim < 3 or views.shape[-1] != self.dim or views.shape[-3] < 1:
            raise InvalidArgumentError(f"expected (..., N, T, {self.dim}) features, got {tuple(views.shape)}")
        if self.strategy == "max":
            return views.amax(dim=-3), None
        if self.strategy == "mean":
            return views.mean(dim=-3), None
        if self.strategy == "concat":
            if views.shape[-3] != self.n_views:
                raise InvalidArgumentError(f"concat fusion built for {self.n_views} views, got {views.shape[-3]}")
            x = views.movedim(-3, -2)  # (..., T, N, dim)
            return self.proj(x.reshape(*x.shape[:-2], -1)), None
        tokens = views.movedim(-3, -2)  # (..., T, N, dim)
        out, w = self.layer(tokens)
        return out.mean(dim=-2), w


class PredictionHeads(nn.Module):
    def __init__(self, dim: int, n_classes: int):
        super().__init__()
        self.frame = nn.Linear(dim, n_classes)
        self.sequence = nn.Linear(dim, n_classes)

    def frame_logits(self, fused: torch.Tensor) -> torch.Tensor:
        """(..., T, dim) -> (..., T, C)."""
        self._check(fused)
        return self.frame(fused)

    def sequence_logits(self, fused: torch.Tensor) -> torch.Tensor:
        """Average the fused features over frames, then classify: (..., T, dim) -> (..., C)."""
        self._check(fused)
        return self.sequence(fused.mean(dim=-2))

    def _check(self, fused):
        if fused.ndim < 2 or fused.shape[-1] != self.frame.in_features:
            raise InvalidArgumentError(f"expected (..., T, {self.frame.in_features}) features, got {tuple(fused.shape)}")
