"""Scaled dot-product attention and the pre-norm transformer layer used by every encoder."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgumentError


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    Returns ``(output, weights)``; every row of ``weights`` sums to one.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[-1] < 1:
        raise InvalidArgumentError(f"incompatible shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    for name, x in (("q", q), ("k", k), ("v", v)):
        if not torch.isfinite(x).all():
            raise InvalidArgumentError(f"non-finite values in {name}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    e = scores.exp()
    weights = e / e.sum(dim=-1, keepdim=True)
    return weights @ v, weights


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise InvalidArgumentError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        """x: (..., M, dim) -> output (..., M, dim), head-averaged weights (..., M, M)."""
        *lead, m, d = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(*lead, m, 3, h, d // h).movedim(-2, -4)  # (..., h, M, 3, dk)
        q, k, v = qkv.unbind(-2)
        o, w = scaled_dot_attention(q, k, v)
        o = o.movedim(-3, -2).reshape(*lead, m, d)
        return self.out(o), w.mean(dim=-3)


class TransformerLayer(nn.Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + FFN(LN(x)) with a GELU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_mult * dim)
        self.ff2 = nn.Linear(ff_mult * dim, dim)

    def forward(self, x):
        a, w = self.attn(self.norm1(x))
        x = x + a
        x = x + self.ff2(F.gelu(self.ff1(self.norm2(x))))
        return x, w


class TransformerStack(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, ff_mult: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(TransformerLayer(dim, heads, ff_mult) for _ in range(depth))

    def forward(self, x):
        """Returns the output and the last layer's head-averaged attention (None when depth is 0)."""
        w = None
        for layer in self.layers:
            x, w = layer(x)
        return x, w


def sinusoidal_table(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return table.to(dtype)


@torch.no_grad()
def init_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every Linear; LayerNorms to identity."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.in_features)
            m.weight.copy_(torch.rand(m.weight.shape, generator=generator, dtype=torch.float64) * 2 * bound - bound)
            if m.bias is not None:
                m.bias.copy_(torch.rand(m.bias.shape, generator=generator, dtype=torch.float64) * 2 * bound - bound)
        elif isinstance(m, nn.LayerNorm):
            m.weight.fill_(1.0)
            m.bias.zero_()
