"""Command-line entry point.

    multitsf gen-data --episodes 10 --views 3 --classes 4 --seed 7 --out data/
    multitsf split --data data/ --ratio 0.7 --seed 0
    multitsf train --config run.json
    multitsf eval --config run.json --checkpoint out/checkpoint --level sequence
    multitsf ablate-fusion --config run.json
    multitsf export-attention --config run.json --checkpoint out/checkpoint --episode-id ep0003 --out attn/

Machine-readable results go to stdout as JSON; everything else goes to stderr.
Exit status: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import storage
from .datapipe import assemble_batch, sample_frame_indices
from .errors import InvalidArgumentError, MultiTSFError
from .experiments import ablate_fusion
from .fusion import FUSION_STRATEGIES
from .metrics import MAP_S_MODES
from .synthgen import GenConfig, generate_dataset
from .trainkit import (RunConfig, configure_threads, evaluate_checkpoint, load_checkpoint, load_episodes,
                       resolve_split, train, write_split, stratified_ids)

log = logging.getLogger("multitsf")


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _load_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    if path is None:
        raise UsageError(f"{args.command} requires --config")
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    cfg = RunConfig.load(path)
    overrides = {}
    for flag, key in (("out", "out_dir"), ("seed", "seed"), ("modality", "modality"), ("strategy", "fusion"),
                      ("map_s_mode", "map_s_mode"), ("ratio", "ratio"), ("data", "data_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return cfg.replace(**overrides) if overrides else cfg


def cmd_gen_data(args) -> None:
    base = storage.read_json(args.gen_config) if args.gen_config else {}
    for flag, key in (("views", "n_views"), ("classes", "n_classes"), ("t_raw", "t_raw"), ("events", "n_events"),
                      ("signatures", "signatures")):
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    gen = GenConfig.from_json(base)
    manifest = generate_dataset(args.episodes, gen, args.seed, args.out)
    log.info("wrote %d episodes to %s", len(manifest["episode_ids"]), args.out)
    _emit({"out": str(args.out), "episodes": len(manifest["episode_ids"])})


def cmd_split(args) -> None:
    if args.config:
        cfg = _load_config(args)
        data_dir, ratio, seed = cfg.data_dir, cfg.ratio, cfg.seed
        out = args.out or cfg.split_path
    else:
        if not args.data:
            raise UsageError("split needs --data or --config")
        data_dir, ratio, seed = args.data, args.ratio or 0.7, args.seed or 0
        out = args.out
    if data_dir is None:
        raise UsageError("no dataset directory given")
    out = out or str(Path(data_dir) / "splits.json")
    episodes = storage.load_dataset(data_dir)
    tr, te = stratified_ids(episodes, ratio, seed)
    _emit(write_split(out, tr, te, ratio, seed) | {"path": out})


def cmd_train(args) -> None:
    cfg = _load_config(args)
    episodes = load_episodes(cfg)
    tr, te = resolve_split(cfg, episodes)
    out_dir = cfg.out_dir or "runs/train"
    result = train(cfg, episodes, tr, te, out_dir=out_dir)
    _emit({"out_dir": out_dir, "epochs": result.epoch, "final": result.history[-1] if result.history else None})


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    if not args.checkpoint:
        raise UsageError("eval requires --checkpoint")
    episodes = load_episodes(cfg)
    tr, te = resolve_split(cfg, episodes)
    ids = tr if args.split == "train" else te
    metrics = evaluate_checkpoint(args.checkpoint, episodes, ids, args.level, cfg.map_s_mode)
    _emit({"level": args.level, "split": args.split, "map_s_mode": cfg.map_s_mode, **metrics})


def cmd_ablate_fusion(args) -> None:
    cfg = _load_config(args)
    episodes = load_episodes(cfg)
    tr, te = resolve_split(cfg, episodes)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = ablate_fusion(cfg, episodes, tr, te, seeds)
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        storage.write_json(Path(cfg.out_dir) / "config.json", cfg.to_json())
        storage.write_json(Path(cfg.out_dir) / "ablate_fusion.json", table)
    _emit(table)


@torch.no_grad()
def cmd_export_attention(args) -> None:
    if not args.checkpoint or not args.episode_id or not args.out:
        raise UsageError("export-attention requires --checkpoint, --episode-id and --out")
    model, _, saved, _ = load_checkpoint(args.checkpoint)
    data_dir = _load_config(args).data_dir if args.config else (args.data or saved.data_dir)
    if data_dir is None:
        raise UsageError("no dataset directory: pass --config or --data")
    if saved.fusion != "transformer":
        raise InvalidArgumentError(f"checkpoint uses {saved.fusion} fusion, which has no attention weights")
    ep = storage.read_episode(Path(data_dir) / args.episode_id)
    b = assemble_batch([ep], [sample_frame_indices(ep.t_raw, saved.t, "test")], saved.modality)
    t = b.tensors(saved.torch_dtype)
    model.eval()
    out = model(t["visual"], t["audio"])
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    storage.write_tensor(d / "fusion_attn.mtsf", out.fusion_attn[0].float().numpy())
    files = ["fusion_attn.mtsf"]
    for n in range(ep.n_views):
        name = f"temporal_attn_view{n + 1}.mtsf"
        storage.write_tensor(d / name, out.temporal_attn[0, n].float().numpy())
        files.append(name)
    storage.write_json(d / "config.json", saved.to_json())
    _emit({"out": str(d), "episode_id": args.episode_id, "files": files})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-fusion": cmd_ablate_fusion,
    "export-attention": cmd_export_attention,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multitsf", description="Multi-view audio-visual action recognition toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--views", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--events", type=int)
    g.add_argument("--t-raw", type=int)
    g.add_argument("--signatures", choices=("both", "split"))
    g.add_argument("--gen-config", help="JSON file of generator settings")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("split", help="stratified train/test split of a dataset")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--ratio", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    def run_flags(q, strategy=True):
        q.add_argument("--config")
        q.add_argument("--out")
        q.add_argument("--seed", type=int)
        q.add_argument("--ratio", type=float)
        q.add_argument("--modality", choices=("av", "visual"))
        if strategy:
            q.add_argument("--strategy", choices=FUSION_STRATEGIES)
        q.add_argument("--map-s-mode", choices=MAP_S_MODES)

    t = sub.add_parser("train", help="train a model")
    run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    run_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--level", choices=("frame", "sequence"), default="sequence")
    e.add_argument("--split", choices=("train", "test"), default="test")

    a = sub.add_parser("ablate-fusion", help="train and compare all four fusion strategies")
    run_flags(a, strategy=False)
    a.add_argument("--seeds", default="0,1,2")

    x = sub.add_parser("export-attention", help="write attention weights of one episode as tensor files")
    x.add_argument("--config")
    x.add_argument("--data")
    x.add_argument("--checkpoint")
    x.add_argument("--episode-id")
    x.add_argument("--out")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"multitsf {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (MultiTSFError, OSError, ValueError) as e:
        print(f"multitsf {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    configure_threads()
    sys.exit(run())


if __name__ == "__main__":
    main()
