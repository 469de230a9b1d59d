"""Seeded train-then-evaluate comparisons (fusion strategy, modality, loss terms)."""

from __future__ import annotations

import logging
import statistics

from .episode import Episode
from .fusion import FUSION_STRATEGIES
from .trainkit import RunConfig, evaluate, train

log = logging.getLogger(__name__)

# loss-term ablation rows: which of L_H, L_S, L_F are on
LOSS_ROWS = {
    1: dict(beta1=1.0, beta3=1.0, beta2=1.0),
    2: dict(beta1=1.0, beta3=1.0, beta2=0.0),
    3: dict(beta1=1.0, beta3=0.0, beta2=1.0),
    4: dict(beta1=0.0, beta3=1.0, beta2=1.0),
    5: dict(beta1=0.0, beta3=1.0, beta2=0.0),
    6: dict(beta1=0.0, beta3=0.0, beta2=1.0),
}


def compare(base: RunConfig, variants: dict[str, dict], episodes: dict[str, Episode], train_ids: list[str],
            test_ids: list[str], seeds=(0, 1, 2)) -> dict:
    """Train every variant (config overrides) once per seed on the same split.

    Returns {"rows": [{name, sequence: {map_c, map_s}, frame: {...}, per_seed: [...]}], "seeds", "n_train", "n_test"}
    with metrics averaged over seeds.
    """
    rows = []
    for name, overrides in variants.items():
        per_seed = []
        for seed in seeds:
            cfg = base.replace(**overrides, seed=seed, eval_every=0)
            result = train(cfg, episodes, train_ids)
            ev = evaluate(result.model, episodes, test_ids, result.config)
            per_seed.append({lvl: {"map_c": m["map_c"], "map_s": m["map_s"]} for lvl, m in ev.items()})
            log.info("%s seed %d: %s", name, seed, per_seed[-1])
        row = {"name": name, "per_seed": per_seed}
        for lvl in ("sequence", "frame"):
            row[lvl] = {k: statistics.fmean(r[lvl][k] for r in per_seed) for k in ("map_c", "map_s")}
        rows.append(row)
    return {"rows": rows, "seeds": list(seeds), "n_train": len(train_ids), "n_test": len(test_ids)}


def ablate_fusion(base: RunConfig, episodes, train_ids, test_ids, seeds=(0, 1, 2)) -> dict:
    """One row per fusion strategy, in the order max, mean, concat, transformer."""
    order = ("max", "mean", "concat", "transformer")
    assert set(order) == set(FUSION_STRATEGIES)
    table = compare(base, {s: {"fusion": s} for s in order}, episodes, train_ids, test_ids, seeds)
    table["modality"] = base.modality
    return table


def rank_of(table: dict, name: str, level: str = "frame", key: str = "map_c") -> int:
    """1-based rank of row ``name`` when rows are sorted by descending ``level``/``key``."""
    ordered = sorted(table["rows"], key=lambda r: -r[level][key])
    return 1 + [r["name"] for r in ordered].index(name)
