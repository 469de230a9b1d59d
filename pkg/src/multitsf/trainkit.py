"""Run configuration, optimizer, cosine schedule, checkpoints, training and evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import storage
from .datapipe import assemble_batch, iterative_stratified_split, sample_frame_indices
from .episode import Episode
from .errors import FormatError, InvalidArgumentError, NumericError, UndefinedMetricError
from .losses import LossBundle, LossWeights, compute_losses
from .metrics import evaluate_scores
from .model import MultiTSF

log = logging.getLogger(__name__)

LOSS_FIELDS = ("l_h", "l_f_sample", "l_f_class", "l_s_sample", "l_s_class", "total")


@dataclass
class RunConfig:
    # data
    data_dir: str | None = None
    split_path: str | None = None
    out_dir: str | None = None
    ratio: float = 0.7
    t: int = 70
    n_views: int = 3
    n_classes: int = 8
    channels: int = 3
    height: int = 32
    width: int = 32
    n_freq: int = 32
    # model
    modality: str = "av"
    fusion: str = "transformer"
    patch: int = 16
    d_audio: int = 64
    d_visual: int = 64
    d_temporal: int = 128
    encoder_depth: int = 1
    encoder_heads: int = 4
    temporal_depth: int = 2
    temporal_heads: int = 4
    fusion_heads: int = 4
    ff_mult: int = 2
    spatial_pe: bool = True
    # objective
    loss: str = "two_way"
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    gamma_s: float = 1.0
    gamma_c: float = 1.0
    # optimization
    lr: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 12
    epochs: int = 300
    # evaluation / bookkeeping
    eval_every: int = 1
    map_s_mode: str = "example"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        dims = ("t", "n_views", "n_classes", "channels", "height", "width", "n_freq", "patch", "d_audio",
                "d_visual", "d_temporal", "encoder_heads", "temporal_heads", "fusion_heads", "ff_mult",
                "batch_size")
        for name in dims:
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.epochs < 0 or self.eval_every < 0:
            raise InvalidArgumentError("epochs and eval_every must be nonnegative")
        if self.modality not in ("av", "visual"):
            raise InvalidArgumentError(f"modality must be av or visual, got {self.modality!r}")
        if self.loss not in ("two_way", "bce"):
            raise InvalidArgumentError(f"loss must be two_way or bce, got {self.loss!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.lr < 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise InvalidArgumentError("need 0 <= lr_min <= lr")
        self.loss_weights()  # validates betas, alphas, gammas

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.beta1, self.beta2, self.beta3, self.alpha1, self.alpha2, self.gamma_s, self.gamma_c)

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(storage.read_json(path))

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_json({**self.to_json(), **changes})

    def fit_to(self, episode: Episode) -> "RunConfig":
        """Copy with the data-shape fields taken from ``episode``."""
        d, h, w = episode.visual.shape[2:]
        return self.replace(n_views=episode.n_views, n_classes=episode.n_classes, channels=d,
                            height=h, width=w, n_freq=episode.audio.shape[2])


def configure_threads() -> None:
    """Honour MULTITSF_THREADS: a positive value caps torch threads, 0 forces
    a single thread with deterministic kernels."""
    raw = os.environ.get("MULTITSF_THREADS")
    if raw is None:
        return
    n = int(raw)
    torch.set_num_threads(max(1, n))
    if n == 0:
        torch.use_deterministic_algorithms(True)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    if lr_min > lr_max:
        raise InvalidArgumentError("lr_min exceeds lr_max")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def optimizer_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor | None], state: AdamState,
                   lr: float, weight_decay: float = 0.0, betas: tuple[float, float] = (0.9, 0.999),
                   eps: float = 1e-8) -> None:
    """One Adam update with decoupled weight decay, in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta
    A missing gradient counts as zero.
    """
    b1, b2 = betas
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        update = (m / c1) / ((v / c2).sqrt() + eps)
        p.mul_(1.0 - lr * weight_decay)
        p.sub_(lr * update)


# -- checkpoints ------------------------------------------------------------------


def _fname(name: str) -> str:
    return name.replace("/", "_") + ".mtsf"


def save_checkpoint(directory, model: MultiTSF, state: AdamState, cfg: RunConfig, epoch: int) -> None:
    """``params/`` and ``moments/`` tensor files plus ``params.json``, ``optim.json`` and ``config.json``."""
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    (d / "moments").mkdir(exist_ok=True)
    index = {}
    for name, p in model.named_parameters():
        storage.write_tensor(d / "params" / _fname(name), p.detach().cpu().numpy())
        index[name] = {"file": f"params/{_fname(name)}", "shape": list(p.shape)}
    for name in state.m:
        storage.write_tensor(d / "moments" / ("m." + _fname(name)), state.m[name].cpu().numpy())
        storage.write_tensor(d / "moments" / ("v." + _fname(name)), state.v[name].cpu().numpy())
    storage.write_json(d / "params.json", index)
    storage.write_json(d / "optim.json", {
        "step": state.step,
        "epoch": epoch,
        "moments": sorted(state.m),
        # data order and windows are drawn from generators seeded by (seed, epoch)
        "rng": {"seed": cfg.seed, "next_epoch": epoch},
    })
    storage.write_json(d / "config.json", cfg.to_json())


def load_checkpoint(directory) -> tuple[MultiTSF, AdamState, RunConfig, int]:
    d = Path(directory)
    for name in ("params.json", "optim.json", "config.json"):
        if not (d / name).is_file():
            raise FormatError(f"{d}: missing {name}")
    cfg = RunConfig.load(d / "config.json")
    model = MultiTSF.from_config(cfg)
    index = storage.read_json(d / "params.json")
    params = dict(model.named_parameters())
    if set(index) != set(params):
        raise FormatError(f"{d}: parameter set does not match the configured model")
    with torch.no_grad():
        for name, p in params.items():
            arr = storage.read_tensor(d / index[name]["file"])
            if tuple(arr.shape) != tuple(p.shape):
                raise FormatError(f"{d}: {name} has shape {arr.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
    optim = storage.read_json(d / "optim.json")
    state = AdamState(step=int(optim["step"]))
    for name in optim["moments"]:
        state.m[name] = torch.from_numpy(storage.read_tensor(d / "moments" / ("m." + _fname(name)))).to(cfg.torch_dtype)
        state.v[name] = torch.from_numpy(storage.read_tensor(d / "moments" / ("v." + _fname(name)))).to(cfg.torch_dtype)
    return model, state, cfg, int(optim["epoch"])


# -- data helpers -------------------------------------------------------------------


def write_split(path, train: list[str], test: list[str], ratio: float, seed: int) -> dict:
    split = {"train": list(train), "test": list(test), "ratio": ratio, "seed": seed}
    storage.write_json(path, split)
    return split


def read_split(path) -> tuple[list[str], list[str]]:
    s = storage.read_json(path)
    try:
        return list(s["train"]), list(s["test"])
    except KeyError as e:
        raise FormatError(f"{path}: missing {e}") from None


def stratified_ids(episodes: dict[str, Episode], ratio: float, seed: int) -> tuple[list[str], list[str]]:
    ids = sorted(episodes)
    labels = np.stack([episodes[i].seq_label for i in ids])
    tr, te = iterative_stratified_split(labels, ratio, seed)
    return [ids[i] for i in tr], [ids[i] for i in te]


def _batches(ids: list[str], size: int):
    for i in range(0, len(ids), size):
        yield ids[i:i + size]


# -- evaluation ----------------------------------------------------------------------


@torch.no_grad()
def predict(model: MultiTSF, episodes: dict[str, Episode], ids: list[str], cfg: RunConfig):
    """Test-mode forward pass over ``ids``; returns (frame logits, frame labels, seq logits, seq labels)
    as float64 arrays with frames of all episodes stacked on one axis."""
    model.eval()
    fl, fy, sl, sy = [], [], [], []
    for chunk in _batches(ids, cfg.batch_size):
        eps = [episodes[i] for i in chunk]
        windows = [sample_frame_indices(e.t_raw, cfg.t, "test") for e in eps]
        b = assemble_batch(eps, windows, cfg.modality).tensors(cfg.torch_dtype)
        out = model(b["visual"], b["audio"])
        fl.append(out.frame_logits.double().reshape(-1, cfg.n_classes).numpy())
        fy.append(b["frame_labels"].reshape(-1, cfg.n_classes).numpy())
        sl.append(out.seq_logits.double().numpy())
        sy.append(b["seq_label"].numpy())
    return np.concatenate(fl), np.concatenate(fy), np.concatenate(sl), np.concatenate(sy)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def evaluate(model: MultiTSF, episodes: dict[str, Episode], ids: list[str], cfg: RunConfig,
             levels=("sequence", "frame")) -> dict:
    """{level: {map_c, map_s, per_class_ap}} for sigmoid scores at each requested level."""
    if not ids:
        raise InvalidArgumentError("cannot evaluate an empty split")
    fl, fy, sl, sy = predict(model, episodes, ids, cfg)
    out = {}
    for level in levels:
        if level == "frame":
            scores, labels = _sigmoid(fl), fy
        elif level == "sequence":
            scores, labels = _sigmoid(sl), sy
        else:
            raise InvalidArgumentError(f"unknown level {level!r}")
        try:
            out[level] = evaluate_scores(scores, labels, cfg.map_s_mode)
        except UndefinedMetricError as e:
            raise UndefinedMetricError(f"{level}-level metrics on {len(ids)} episodes: {e}") from e
    return out


def evaluate_checkpoint(checkpoint_dir, episodes: dict[str, Episode], ids: list[str], level: str,
                        map_s_mode: str | None = None) -> dict:
    model, _, cfg, _ = load_checkpoint(checkpoint_dir)
    if map_s_mode is not None:
        cfg = cfg.replace(map_s_mode=map_s_mode)
    return evaluate(model, episodes, ids, cfg, levels=(level,))[level]


# -- training -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MultiTSF
    state: AdamState
    config: RunConfig
    history: list[dict]
    epoch: int


def train(cfg: RunConfig, episodes: dict[str, Episode], train_ids: list[str], test_ids: list[str] | None = None,
          *, out_dir=None, resume=None, stop_after: int | None = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs (or until epoch ``stop_after``), logging one JSON record per epoch.

    With ``resume`` (a checkpoint directory) training continues from the saved
    epoch with the saved parameters and moments; the run is deterministic in the
    seeds, so a resumed run retraces an uninterrupted one.
    """
    if not train_ids:
        raise InvalidArgumentError("empty training split")
    configure_threads()
    if resume is not None:
        model, state, saved, start = load_checkpoint(resume)
        cfg = saved.replace(out_dir=cfg.out_dir, epochs=cfg.epochs, eval_every=cfg.eval_every)
    else:
        cfg = cfg.fit_to(episodes[train_ids[0]])
        model, state, start = MultiTSF.from_config(cfg), AdamState(), 0
    weights = cfg.loss_weights()
    steps_per_epoch = math.ceil(len(train_ids) / cfg.batch_size)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    params = dict(model.named_parameters())
    last = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)

    log_file = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        storage.write_json(Path(out_dir) / "config.json", cfg.to_json())
        log_file = open(Path(out_dir) / "train_log.jsonl", "a" if resume is not None else "w", encoding="utf-8")

    history = []
    try:
        for epoch in range(start, last):
            model.train()
            t0 = time.time()
            rng = np.random.default_rng([cfg.seed, epoch])
            order = [train_ids[i] for i in rng.permutation(len(train_ids))]
            epoch_lr = cosine_lr(min(state.step, total_steps), total_steps, cfg.lr, cfg.lr_min)
            sums = dict.fromkeys(LOSS_FIELDS, 0.0)
            n_batches = 0
            for chunk in _batches(order, cfg.batch_size):
                eps = [episodes[i] for i in chunk]
                windows = [sample_frame_indices(e.t_raw, cfg.t, "train", int(rng.integers(2**63))) for e in eps]
                b = assemble_batch(eps, windows, cfg.modality).tensors(cfg.torch_dtype)
                out = model(b["visual"], b["audio"])
                total, bundle = compute_losses(out, b["frame_labels"], b["seq_label"], b["human"], weights, cfg.loss)
                model.zero_grad(set_to_none=True)
                total.backward()
                lr = cosine_lr(min(state.step, total_steps), total_steps, cfg.lr, cfg.lr_min)
                grads = {n: p.grad for n, p in params.items()}
                optimizer_step(params, grads, state, lr, cfg.weight_decay, (cfg.adam_beta1, cfg.adam_beta2),
                               cfg.adam_eps)
                for k, v in bundle.to_json().items():
                    sums[k] += v
                n_batches += 1
            record = {"epoch": epoch + 1, "lr": epoch_lr, **{k: v / n_batches for k, v in sums.items()}}
            if test_ids and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
                ev = evaluate(model, episodes, test_ids, cfg)
                record["eval"] = {lvl: {"map_c": m["map_c"], "map_s": m["map_s"]} for lvl, m in ev.items()}
            record["seconds"] = round(time.time() - t0, 3)
            history.append(record)
            log.info("epoch %d total %.4f", epoch + 1, record["total"])
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    end = max(start, last)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "checkpoint", model, state, cfg, end)
    return TrainResult(model, state, cfg, history, end)


def load_episodes(cfg: RunConfig) -> dict[str, Episode]:
    if cfg.data_dir is None:
        raise InvalidArgumentError("config has no data_dir")
    return storage.load_dataset(cfg.data_dir)


def resolve_split(cfg: RunConfig, episodes: dict[str, Episode]) -> tuple[list[str], list[str]]:
    """The split at ``cfg.split_path`` if it exists, otherwise a fresh stratified one (written there)."""
    if cfg.split_path and Path(cfg.split_path).is_file():
        return read_split(cfg.split_path)
    tr, te = stratified_ids(episodes, cfg.ratio, cfg.seed)
    if cfg.split_path:
        write_split(cfg.split_path, tr, te, cfg.ratio, cfg.seed)
    return tr, te
