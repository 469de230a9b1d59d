"""The full network: shared encoders -> AV concat -> shared temporal encoder -> sensor fusion -> heads."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import init_uniform_
from .encoders import AudioEncoder, HumanHead, VisualEncoder, concat_av
from .errors import InvalidArgumentError
from .fusion import PredictionHeads, SensorFusion, TemporalEncoder


@dataclass
class ModelOutput:
    frame_logits: torch.Tensor  # (B, T, C)
    seq_logits: torch.Tensor  # (B, C)
    human_prob: torch.Tensor  # (B, N, T)
    fusion_attn: torch.Tensor | None  # (B, T, N, N)
    temporal_attn: torch.Tensor | None  # (B, N, T, T), last temporal layer


class MultiTSF(nn.Module):
    def __init__(self, *, n_views: int, n_classes: int, channels: int, height: int, width: int, n_freq: int,
                 patch: int = 16, d_audio: int = 64, d_visual: int = 64, d_temporal: int = 128,
                 encoder_depth: int = 1, encoder_heads: int = 4, temporal_depth: int = 2, temporal_heads: int = 4,
                 fusion_heads: int = 4, ff_mult: int = 2, modality: str = "av", fusion: str = "transformer",
                 spatial_pe: bool = True):
        super().__init__()
        if modality not in ("av", "visual"):
            raise InvalidArgumentError(f"unknown modality {modality!r}")
        self.modality = modality
        self.n_views, self.n_classes = n_views, n_classes
        self.visual_encoder = VisualEncoder(channels, height, width, patch, d_visual, encoder_depth,
                                            encoder_heads, ff_mult, spatial_pe)
        self.audio_encoder = AudioEncoder(n_freq, d_audio, encoder_depth, encoder_heads, ff_mult) \
            if modality == "av" else None
        self.human_head = HumanHead(d_visual)
        d_av = d_visual + (d_audio if modality == "av" else 0)
        self.temporal = TemporalEncoder(d_av, d_temporal, temporal_depth, temporal_heads, ff_mult)
        self.fusion = SensorFusion(d_temporal, n_views, fusion, fusion_heads, ff_mult)
        self.heads = PredictionHeads(d_temporal, n_classes)

    @classmethod
    def from_config(cls, cfg) -> "MultiTSF":
        """Build and seed-initialize from a RunConfig-like object."""
        model = cls(
            n_views=cfg.n_views, n_classes=cfg.n_classes, channels=cfg.channels, height=cfg.height,
            width=cfg.width, n_freq=cfg.n_freq, patch=cfg.patch, d_audio=cfg.d_audio, d_visual=cfg.d_visual,
            d_temporal=cfg.d_temporal, encoder_depth=cfg.encoder_depth, encoder_heads=cfg.encoder_heads,
            temporal_depth=cfg.temporal_depth, temporal_heads=cfg.temporal_heads, fusion_heads=cfg.fusion_heads,
            ff_mult=cfg.ff_mult, modality=cfg.modality, fusion=cfg.fusion, spatial_pe=cfg.spatial_pe,
        )
        model.reset_parameters(cfg.seed)
        return model.to(getattr(torch, cfg.dtype))

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(int(seed))
        init_uniform_(self, g)
        pos = self.visual_encoder.pos
        if pos is not None:
            bound = 1.0 / pos.shape[-1] ** 0.5
            with torch.no_grad():
                pos.copy_(torch.rand(pos.shape, generator=g, dtype=torch.float64) * 2 * bound - bound)

    def forward(self, visual: torch.Tensor, audio: torch.Tensor | None = None) -> ModelOutput:
        """visual (B, N, T, D, H, W); audio (B, N, T, F), required in ``av`` mode."""
        if visual.ndim != 6:
            raise InvalidArgumentError(f"expected (B, N, T, D, H, W) visual input, got {tuple(visual.shape)}")
        if self.modality == "av":
            if audio is None:
                raise InvalidArgumentError("av modality needs audio input")
            if audio.shape[:3] != visual.shape[:3]:
                raise InvalidArgumentError(f"audio {tuple(audio.shape)} and visual {tuple(visual.shape)} disagree")
        f_v = self.visual_encoder(visual)  # (B, N, T, Dv)
        f_a = self.audio_encoder(audio) if self.audio_encoder is not None else None
        human = self.human_head(f_v)
        f_t, t_attn = self.temporal(concat_av(f_a, f_v))  # (B, N, T, Dt)
        fused, f_attn = self.fusion(f_t)  # (B, T, Dt)
        return ModelOutput(
            frame_logits=self.heads.frame_logits(fused),
            seq_logits=self.heads.sequence_logits(fused),
            human_prob=human,
            fusion_attn=f_attn,
            temporal_attn=t_attn,
        )
