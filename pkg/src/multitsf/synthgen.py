"""Deterministic synthetic multi-view, multi-label episodes.

Each event is a single actor performing one action class over a frame interval.
The actor is visible in a random nonempty subset of views, where a class-indexed
block of pixels is raised by ``visual_margin`` over unit-variance noise. The
action's sound reaches every view: a class-specific band of spectrogram bins is
raised by ``audio_gain``.

With ``signatures="split"`` even classes are visual-only and odd classes are
audio-only. Audio-only classes still show the actor, but always in one shared
block, so vision alone can tell that *something* happens but not which action.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import storage
from .episode import ActionEvent, Episode
from .errors import GenerationError, InvalidArgumentError

MAX_PLACEMENT_TRIES = 100


@dataclass
class GenConfig:
    n_views: int = 3
    t_raw: int = 200
    n_classes: int = 8
    n_events: int = 4
    channels: int = 3
    height: int = 32
    width: int = 32
    n_freq: int = 32
    visual_margin: float = 0.5
    visual_noise: float = 1.0
    audio_gain: float = 1.0
    audio_noise: float = 0.5
    signatures: str = "both"  # both | split
    min_len: int | None = None
    max_len: int | None = None
    max_concurrent: int = 2
    imbalance_factor: float = 1.0

    def __post_init__(self):
        for name in ("n_views", "t_raw", "n_classes", "channels", "height", "width", "n_freq", "max_concurrent"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.n_events < 0:
            raise InvalidArgumentError("n_events must be >= 0")
        if self.t_raw < 4:
            raise InvalidArgumentError("t_raw must be >= 4")
        if self.signatures not in ("both", "split"):
            raise InvalidArgumentError(f"unknown signatures mode {self.signatures!r}")
        if self.imbalance_factor < 1.0:
            raise InvalidArgumentError("imbalance_factor must be >= 1")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.channels, self.height, self.width, self.n_freq)

    @property
    def event_length_range(self) -> tuple[int, int]:
        lo = self.min_len if self.min_len is not None else max(2, self.t_raw // 10)
        hi = self.max_len if self.max_len is not None else max(lo, self.t_raw // 3)
        lo = min(lo, self.t_raw)
        return lo, min(max(lo, hi), self.t_raw)

    def has_visual_signature(self, c: int) -> bool:
        return self.signatures == "both" or c % 2 == 0

    def has_audio_signature(self, c: int) -> bool:
        return self.signatures == "both" or c % 2 == 1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        return cls(**d)


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for item ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def class_block(cfg: GenConfig, c: int) -> tuple[slice, slice]:
    """Pixel region of the block rendered for class ``c``."""
    cells = cfg.n_classes + (1 if cfg.signatures == "split" else 0)
    g = math.ceil(math.sqrt(cells))
    bh, bw = max(1, cfg.height // g), max(1, cfg.width // g)
    cell = c if cfg.has_visual_signature(c) else cfg.n_classes  # shared actor cell
    r, k = divmod(cell, g)
    return slice(r * bh, (r + 1) * bh), slice(k * bw, (k + 1) * bw)


def audio_band(cfg: GenConfig, c: int) -> tuple[int, int]:
    w = max(1, cfg.n_freq // cfg.n_classes)
    lo = (c * w) % cfg.n_freq
    return lo, min(lo + w, cfg.n_freq)


def round_robin_classes(n_classes: int, count: int, rng: np.random.Generator) -> list[int]:
    """Concatenated random permutations of all classes: every class appears once per cycle."""
    out: list[int] = []
    while len(out) < count:
        out.extend(int(c) for c in rng.permutation(n_classes))
    return out[:count]


def draw_classes(cfg: GenConfig, count: int, rng: np.random.Generator) -> list[int]:
    if cfg.imbalance_factor == 1.0 or cfg.n_classes == 1:
        return round_robin_classes(cfg.n_classes, count, rng)
    # class c is imbalance_factor times rarer than class 0 at the tail
    w = cfg.imbalance_factor ** (-np.arange(cfg.n_classes) / (cfg.n_classes - 1))
    return [int(c) for c in rng.choice(cfg.n_classes, size=count, p=w / w.sum())]


def place_events(cfg: GenConfig, classes: list[int], rng: np.random.Generator) -> list[ActionEvent]:
    lo, hi = cfg.event_length_range
    load = np.zeros(cfg.t_raw, dtype=np.int64)
    events = []
    for c in classes:
        for _ in range(MAX_PLACEMENT_TRIES):
            length = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(0, cfg.t_raw - length + 1))
            if load[start:start + length].max() < cfg.max_concurrent:
                break
        else:
            raise GenerationError(
                f"could not place event of class {c} in {cfg.t_raw} frames "
                f"with at most {cfg.max_concurrent} concurrent events"
            )
        load[start:start + length] += 1
        k = int(rng.integers(1, cfg.n_views + 1))
        views = tuple(sorted(int(v) + 1 for v in rng.choice(cfg.n_views, size=k, replace=False)))
        events.append(ActionEvent(c, start, start + length, views, audio_band(cfg, c)))
    return events


def render_episode(cfg: GenConfig, events: list[ActionEvent], seed: int, episode_id: str = "ep") -> Episode:
    """Render noise plus event signatures, and derive every label from ``events``."""
    n, t, c = cfg.n_views, cfg.t_raw, cfg.n_classes
    for e in events:
        if not (0 <= e.class_id < c and 0 <= e.start_frame < e.end_frame <= t):
            raise InvalidArgumentError(f"event out of bounds: {e}")
        if not e.visible_views or not all(1 <= v <= n for v in e.visible_views):
            raise InvalidArgumentError(f"bad visible views: {e}")

    rng = np.random.default_rng(seed)
    visual = rng.standard_normal((n, t, cfg.channels, cfg.height, cfg.width), dtype=np.float32)
    visual *= np.float32(cfg.visual_noise)
    audio = rng.standard_normal((n, t, cfg.n_freq), dtype=np.float32)
    audio *= np.float32(cfg.audio_noise)

    frame_labels = np.zeros((t, c), dtype=np.uint8)
    human_mask = np.zeros((n, t), dtype=np.uint8)
    for e in events:
        span = slice(e.start_frame, e.end_frame)
        frame_labels[span, e.class_id] = 1
        rows, cols = class_block(cfg, e.class_id)
        for v in e.visible_views:
            human_mask[v - 1, span] = 1
            visual[v - 1, span, :, rows, cols] += np.float32(cfg.visual_margin)
        if cfg.has_audio_signature(e.class_id):
            audio[:, span, e.audio_band[0]:e.audio_band[1]] += np.float32(cfg.audio_gain)

    return Episode(
        episode_id=episode_id,
        visual=visual,
        audio=audio,
        frame_labels=frame_labels,
        seq_label=frame_labels.max(axis=0),
        human_mask=human_mask,
        events=list(events),
        seed=int(seed),
    )


def generate_episode(cfg: GenConfig, seed: int, *, classes: list[int] | None = None,
                     episode_id: str = "ep") -> Episode:
    """Draw ``cfg.n_events`` events and render them. Bitwise deterministic in (cfg, seed, classes)."""
    rng = np.random.default_rng([int(seed), 1])
    if classes is None:
        classes = draw_classes(cfg, cfg.n_events, rng)
    events = place_events(cfg, list(classes), rng)
    return render_episode(cfg, events, seed, episode_id)


def episode_id(index: int) -> str:
    return f"ep{index:04d}"


def _dataset_plan(n_episodes: int, cfg: GenConfig, seed: int):
    rng = np.random.default_rng([int(seed), 0xC1A55])
    classes = draw_classes(cfg, n_episodes * cfg.n_events, rng)
    k = cfg.n_events
    for i in range(n_episodes):
        yield episode_id(i), derive_seed(seed, i), classes[i * k:(i + 1) * k]


def generate_episodes(n_episodes: int, cfg: GenConfig, seed: int) -> list[Episode]:
    """In-memory dataset; the same episodes ``generate_dataset`` writes to disk.

    Class draws run round-robin across the whole dataset, so every class is
    used once ``n_episodes * n_events >= n_classes``.
    """
    return [
        generate_episode(cfg, s, classes=cls, episode_id=eid)
        for eid, s, cls in _dataset_plan(n_episodes, cfg, seed)
    ]


def generate_dataset(n_episodes: int, cfg: GenConfig, seed: int, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for eid, s, cls in _dataset_plan(n_episodes, cfg, seed):
        storage.write_episode(out / eid, generate_episode(cfg, s, classes=cls, episode_id=eid))
        ids.append(eid)
    return storage.write_manifest(out, ids, cfg.to_json(), seed)
