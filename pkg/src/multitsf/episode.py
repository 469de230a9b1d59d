"""Episode and action-event records shared by the generator, storage and data pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ActionEvent:
    class_id: int
    start_frame: int
    end_frame: int  # exclusive
    visible_views: tuple[int, ...]  # 1-based view ids
    audio_band: tuple[int, int]  # [lo, hi) frequency bins

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "visible_views": list(self.visible_views),
            "audio_band": list(self.audio_band),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ActionEvent":
        return cls(
            class_id=int(d["class_id"]),
            start_frame=int(d["start_frame"]),
            end_frame=int(d["end_frame"]),
            visible_views=tuple(int(v) for v in d["visible_views"]),
            audio_band=(int(d["audio_band"][0]), int(d["audio_band"][1])),
        )


@dataclass
class Episode:
    """One multi-view recording.

    Arrays are stacked over views:
      visual      (N, T_raw, D, H, W) float32
      audio       (N, T_raw, F) float32
      frame_labels (T_raw, C) uint8
      seq_label   (C,) uint8
      human_mask  (N, T_raw) uint8
    """

    episode_id: str
    visual: np.ndarray
    audio: np.ndarray
    frame_labels: np.ndarray
    seq_label: np.ndarray
    human_mask: np.ndarray
    events: list[ActionEvent] = field(default_factory=list)
    seed: int = 0

    @property
    def n_views(self) -> int:
        return self.visual.shape[0]

    @property
    def t_raw(self) -> int:
        return self.visual.shape[1]

    @property
    def n_classes(self) -> int:
        return self.frame_labels.shape[1]

    def check(self) -> None:
        """Raise ValueError if the label arrays disagree with each other or with the events."""
        n, t = self.n_views, self.t_raw
        c = self.n_classes
        if self.audio.shape[:2] != (n, t):
            raise ValueError(f"audio shape {self.audio.shape} does not match N={n}, T_raw={t}")
        if self.frame_labels.shape != (t, c) or self.seq_label.shape != (c,):
            raise ValueError("label shapes disagree")
        if self.human_mask.shape != (n, t):
            raise ValueError(f"human mask shape {self.human_mask.shape} != {(n, t)}")
        for arr in (self.frame_labels, self.seq_label, self.human_mask):
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("label entries must be 0 or 1")
        if not np.array_equal(self.seq_label, self.frame_labels.max(axis=0)):
            raise ValueError("seq_label is not the union of frame labels")

    def equals(self, other: "Episode") -> bool:
        """Bitwise structural equality."""
        if not isinstance(other, Episode):
            return False
        arrays = ("visual", "audio", "frame_labels", "seq_label", "human_mask")
        return (
            self.episode_id == other.episode_id
            and self.seed == other.seed
            and self.events == other.events
            and all(
                getattr(self, a).dtype == getattr(other, a).dtype
                and getattr(self, a).shape == getattr(other, a).shape
                and getattr(self, a).tobytes() == getattr(other, a).tobytes()
                for a in arrays
            )
        )
