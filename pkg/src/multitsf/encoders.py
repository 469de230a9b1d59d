"""Shared per-view audio and visual encoders and the human-presence head.

One instance of each encoder serves every view: callers fold the view axis into
the leading batch dimensions, so identical inputs always give identical features.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .attention import TransformerStack
from .errors import InvalidArgumentError


class AudioEncoder(nn.Module):
    """Per-frame spectrogram rows -> tokens -> transformer across frames.

    Input (..., T, F); output (..., T, dim). Each frame's feature depends on the
    whole window through attention.
    """

    def __init__(self, n_freq: int, dim: int, depth: int = 1, heads: int = 4, ff_mult: int = 2):
        super().__init__()
        self.n_freq = n_freq
        self.proj = nn.Linear(n_freq, dim)
        self.blocks = TransformerStack(dim, depth, heads, ff_mult)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        if spec.ndim < 2 or spec.shape[-1] != self.n_freq:
            raise InvalidArgumentError(f"expected (..., T, {self.n_freq}) spectrogram, got {tuple(spec.shape)}")
        x, _ = self.blocks(self.proj(spec))
        return x


class VisualEncoder(nn.Module):
    """Frame-wise ViT-style encoder: P x P patches -> linear embedding (+ learned
    per-patch position vector) -> transformer over patches -> mean over patches.

    Input (..., D, H, W); output (..., dim). Frames never attend to each other.
    """

    def __init__(self, channels: int, height: int, width: int, patch: int, dim: int,
                 depth: int = 1, heads: int = 4, ff_mult: int = 2, spatial_pe: bool = True):
        super().__init__()
        if height % patch or width % patch:
            raise InvalidArgumentError(f"{height}x{width} frames are not divisible into {patch}x{patch} patches")
        self.channels, self.height, self.width, self.patch = channels, height, width, patch
        self.n_patches = (height // patch) * (width // patch)
        self.embed = nn.Linear(channels * patch * patch, dim)
        if spatial_pe:
            bound = 1.0 / math.sqrt(dim)
            self.pos = nn.Parameter(torch.empty(self.n_patches, dim).uniform_(-bound, bound))
        else:
            self.register_parameter("pos", None)
        self.blocks = TransformerStack(dim, depth, heads, ff_mult)

    def patchify(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., D, H, W) -> (..., n_patches, D*P*P), patches in row-major order."""
        if frames.shape[-3:] != (self.channels, self.height, self.width):
            raise InvalidArgumentError(
                f"expected (..., {self.channels}, {self.height}, {self.width}) frames, got {tuple(frames.shape)}"
            )
        *lead, d, h, w = frames.shape
        p, k = self.patch, len(lead)
        x = frames.reshape(*lead, d, h // p, p, w // p, p)
        x = x.permute(*range(k), k + 1, k + 3, k, k + 2, k + 4)  # (..., gh, gw, d, p, p)
        return x.reshape(*lead, self.n_patches, d * p * p)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        tokens = self.embed(self.patchify(frames))
        if self.pos is not None:
            tokens = tokens + self.pos
        x, _ = self.blocks(tokens)
        return x.mean(dim=-2)


class HumanHead(nn.Module):
    """Linear probe on visual features: per-frame probability that a person is visible."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, 1)

    def forward(self, visual: torch.Tensor) -> torch.Tensor:
        if visual.shape[-1] != self.linear.in_features:
            raise InvalidArgumentError(f"expected width {self.linear.in_features}, got {visual.shape[-1]}")
        return torch.sigmoid(self.linear(visual).squeeze(-1))


def concat_av(audio: torch.Tensor | None, visual: torch.Tensor) -> torch.Tensor:
    """Frame-wise [audio; visual]. With ``audio=None`` (visual-only mode) returns ``visual``."""
    if audio is None:
        return visual
    if audio.shape[:-1] != visual.shape[:-1]:
        raise InvalidArgumentError(f"audio {tuple(audio.shape)} and visual {tuple(visual.shape)} frames disagree")
    return torch.cat([audio, visual], dim=-1)
