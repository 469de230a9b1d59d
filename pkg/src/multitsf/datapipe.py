"""Frame sampling, stratified train/test splitting, detection manifests and batch assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .episode import Episode
from .errors import FormatError, InvalidArgumentError


def sample_frame_indices(t_raw: int, t: int, mode: str = "test", seed: int = 0) -> np.ndarray:
    """T frame indices spread uniformly over ``t_raw`` frames.

    Index i sits at the midpoint of the i-th of T equal segments. In ``train``
    mode each index is jittered by an integer in [-t_raw//(2t), t_raw//(2t)],
    clamped to the episode and re-sorted. Windows longer than the episode repeat
    frames.
    """
    if t_raw < 1 or t < 1:
        raise InvalidArgumentError(f"t_raw and t must be positive, got {t_raw}, {t}")
    i = np.arange(t, dtype=np.int64)
    base = ((2 * i + 1) * t_raw) // (2 * t)
    if mode == "test":
        return base
    if mode != "train":
        raise InvalidArgumentError(f"unknown sampling mode {mode!r}")
    radius = t_raw // (2 * t)
    rng = np.random.default_rng(seed)
    jitter = rng.integers(-radius, radius + 1, size=t)
    return np.sort(np.clip(base + jitter, 0, t_raw - 1))


def iterative_stratified_split(labels, ratio: float, seed: int = 0,
                               refine: bool = True) -> tuple[list[int], list[int]]:
    """First-order iterative stratification into (train, test) row indices.

    Repeatedly takes the label with the fewest unassigned examples and gives
    each of those examples to the subset that still wants the most of that
    label (ties: the subset wanting the most examples overall, then a seeded
    coin). Label-free rows go to whichever subset is furthest below its size.

    The greedy pass leaves frequent labels, which are mostly placed as a side
    effect of rarer ones, off target on dense label matrices. With ``refine``
    train/test pairs are then swapped (subset sizes unchanged) while a swap
    lowers the squared per-label deviation from ``ratio * count``; before
    that, single rows are moved until the train side holds round(ratio * S).
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidArgumentError(f"ratio must be in (0, 1), got {ratio}")
    y = np.asarray(labels) > 0
    if y.ndim != 2 or y.shape[0] < 2:
        raise InvalidArgumentError("need a 2-D label matrix with at least two rows")
    rng = np.random.default_rng(seed)
    n, c = y.shape
    props = np.array([ratio, 1.0 - ratio])
    want_total = props * n
    want_label = props[:, None] * y.sum(axis=0)[None, :].astype(np.float64)
    assigned = np.full(n, -1, dtype=np.int64)

    def pick(candidates: np.ndarray) -> int:
        return int(candidates[rng.integers(len(candidates))]) if len(candidates) > 1 else int(candidates[0])

    def choose_subset(label: int | None) -> int:
        subsets = np.arange(2)
        if label is not None:
            col = want_label[:, label]
            subsets = subsets[col == col.max()]
        tot = want_total[subsets]
        return pick(subsets[tot == tot.max()])

    while True:
        free = assigned < 0
        counts = y[free].sum(axis=0)
        if not counts.any():
            break
        live = np.flatnonzero(counts > 0)
        label = pick(live[counts[live] == counts[live].min()])
        rows = np.flatnonzero(free & y[:, label])
        for r in rng.permutation(rows):
            j = choose_subset(label)
            assigned[r] = j
            want_label[j, y[r]] -= 1
            want_total[j] -= 1
    for r in np.flatnonzero(assigned < 0):
        j = choose_subset(None)
        assigned[r] = j
        want_total[j] -= 1
    if refine:
        _rebalance(y, assigned, ratio)
    return np.flatnonzero(assigned == 0).tolist(), np.flatnonzero(assigned == 1).tolist()


def _rebalance(y: np.ndarray, assigned: np.ndarray, ratio: float, max_swaps: int = 10_000) -> None:
    """Best-improvement pair swaps between subsets 0 and 1, in place; deterministic."""
    yf = y.astype(np.float64)
    target = ratio * yf.sum(axis=0)
    n_train = int(round(ratio * len(y)))
    while True:
        tr, te = np.flatnonzero(assigned == 0), np.flatnonzero(assigned == 1)
        gap = n_train - len(tr)
        if gap == 0 or (gap > 0 and len(te) <= 1) or (gap < 0 and len(tr) <= 1):
            break
        dev = yf[tr].sum(axis=0) - target
        src, sign = (te, 1.0) if gap > 0 else (tr, -1.0)
        cost = ((dev + sign * yf[src]) ** 2).sum(-1)
        r = src[int(np.argmin(cost))]
        assigned[r] = 0 if gap > 0 else 1
    for _ in range(max_swaps):
        tr, te = np.flatnonzero(assigned == 0), np.flatnonzero(assigned == 1)
        if not len(tr) or not len(te):
            return
        dev = yf[tr].sum(axis=0) - target  # (C,)
        # moving i out of train and j into train shifts counts by y[j] - y[i]
        delta = yf[te][None, :, :] - yf[tr][:, None, :]  # (|tr|, |te|, C)
        gain = ((dev + delta) ** 2).sum(-1) - (dev ** 2).sum()
        k = int(np.argmin(gain))
        if gain.flat[k] >= -1e-9:
            return
        i, j = divmod(k, len(te))
        assigned[tr[i]], assigned[te[j]] = 1, 0


def ingest_detection_manifest(path, episode_shapes: dict[str, tuple[int, int]]) -> dict[str, np.ndarray]:
    """Dense (N, T_raw) human masks from a JSON-lines detection manifest.

    Each line is ``{"episode_id": str, "view": int (1-based), "frame": int, "human": 0|1}``.
    Episodes or frames without a record default to 0.
    """
    masks = {eid: np.zeros(shape, dtype=np.uint8) for eid, shape in episode_shapes.items()}
    seen: set[tuple[str, int, int]] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                eid, view, frame, human = rec["episode_id"], rec["view"], rec["frame"], rec["human"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"{path}:{lineno}: malformed record ({e})") from None
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in (view, frame, human)):
                raise FormatError(f"{path}:{lineno}: view, frame and human must be integers")
            if human not in (0, 1):
                raise FormatError(f"{path}:{lineno}: human must be 0 or 1")
            if eid not in masks:
                raise FormatError(f"{path}:{lineno}: unknown episode {eid!r}")
            n, t = masks[eid].shape
            if not (1 <= view <= n and 0 <= frame < t):
                raise FormatError(f"{path}:{lineno}: view {view} / frame {frame} outside {n} views x {t} frames")
            key = (eid, view, frame)
            if key in seen:
                raise FormatError(f"{path}:{lineno}: duplicate record for {key}")
            seen.add(key)
            masks[eid][view - 1, frame] = human
    return masks


@dataclass
class Batch:
    episode_ids: list[str]
    visual: np.ndarray  # (B, N, T, D, H, W)
    audio: np.ndarray | None  # (B, N, T, F)
    frame_labels: np.ndarray  # (B, T, C)
    seq_label: np.ndarray  # (B, C)
    human: np.ndarray  # (B, N, T)

    def tensors(self, dtype=torch.float32) -> dict[str, torch.Tensor | None]:
        def t(a):
            return None if a is None else torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
        return {
            "visual": t(self.visual),
            "audio": t(self.audio),
            "frame_labels": t(self.frame_labels),
            "seq_label": t(self.seq_label),
            "human": t(self.human),
        }


def assemble_batch(episodes: Sequence[Episode], windows: Sequence[np.ndarray], modality: str = "av") -> Batch:
    """Gather each episode at its window's frame indices and stack along a batch axis.

    The sequence label is the episode's, regardless of which frames the window hit.
    """
    if modality not in ("av", "visual"):
        raise InvalidArgumentError(f"unknown modality {modality!r}")
    if len(episodes) != len(windows) or not episodes:
        raise InvalidArgumentError("need one window per episode and at least one episode")
    shapes = {(e.n_views, e.n_classes, e.visual.shape[2:], e.audio.shape[2:]) for e in episodes}
    if len(shapes) != 1 or len({len(w) for w in windows}) != 1:
        raise InvalidArgumentError("episodes or windows in a batch disagree in shape")
    idx = [np.asarray(w, dtype=np.int64) for w in windows]
    for e, w in zip(episodes, idx):
        if w.min() < 0 or w.max() >= e.t_raw:
            raise InvalidArgumentError(f"window outside episode {e.episode_id}")
    return Batch(
        episode_ids=[e.episode_id for e in episodes],
        visual=np.stack([e.visual[:, w] for e, w in zip(episodes, idx)]),
        audio=np.stack([e.audio[:, w] for e, w in zip(episodes, idx)]) if modality == "av" else None,
        frame_labels=np.stack([e.frame_labels[w] for e, w in zip(episodes, idx)]),
        seq_label=np.stack([e.seq_label for e in episodes]),
        human=np.stack([e.human_mask[:, w] for e, w in zip(episodes, idx)]),
    )
