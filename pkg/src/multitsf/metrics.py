"""Average precision and the two multi-label summaries, mAP_C (per class) and mAP_S (per sample)."""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError

MAP_S_MODES = ("example", "flattened")


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean of precision@k over the ranks k of the positives.

    Ranking is by descending score; equal scores keep their original order.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1) > 0
    if s.shape != y.shape:
        raise InvalidArgumentError(f"{s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    return math.fsum(k / r for k, r in zip(range(1, n_pos + 1), ranks.tolist())) / n_pos


def _checked(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 2:
        raise InvalidArgumentError(f"scores {s.shape} and labels {y.shape} must be equal 2-D shapes")
    if not np.isfinite(s).all():
        raise InvalidArgumentError("scores must be finite")
    return s, y > 0


def per_class_ap(scores, labels) -> list[float | None]:
    """AP of each column; None for classes with no positives."""
    s, y = _checked(scores, labels)
    return [average_precision(s[:, c], y[:, c]) if y[:, c].any() else None for c in range(s.shape[1])]


def map_c(scores, labels) -> float:
    aps = [a for a in per_class_ap(scores, labels) if a is not None]
    if not aps:
        raise UndefinedMetricError("no class has a positive label")
    return math.fsum(aps) / len(aps)


def map_s(scores, labels, mode: str = "example") -> float:
    """``example``: AP of each sample's class ranking, averaged over samples with positives.
    ``flattened``: one AP over all (sample, class) pairs."""
    s, y = _checked(scores, labels)
    if mode == "flattened":
        if not y.any():
            raise UndefinedMetricError("no positive labels")
        return average_precision(s.reshape(-1), y.reshape(-1))
    if mode != "example":
        raise InvalidArgumentError(f"unknown map_s mode {mode!r}")
    aps = [average_precision(s[i], y[i]) for i in range(s.shape[0]) if y[i].any()]
    if not aps:
        raise UndefinedMetricError("no sample has a positive label")
    return math.fsum(aps) / len(aps)


def evaluate_scores(scores, labels, map_s_mode: str = "example") -> dict:
    return {
        "map_c": map_c(scores, labels),
        "map_s": map_s(scores, labels, map_s_mode),
        "per_class_ap": per_class_ap(scores, labels),
    }
