"""Portable tensor files and the on-disk episode/dataset layout.

A tensor file is a fixed little-endian header followed by the raw row-major
payload::

    b"MTSF" | version u8 | dtype u8 | ndim u8 | ndim x u32 dims | payload

There is no padding and no compression, so identical inputs give identical bytes
on every platform.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .episode import ActionEvent, Episode
from .errors import FormatError, InvalidArgumentError, StorageError

MAGIC = b"MTSF"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1, np.dtype("float64"): 2}
MAX_NDIM = 5


def _header(dims: Sequence[int], code: int) -> bytes:
    return MAGIC + struct.pack(f"<BBB{len(dims)}I", VERSION, code, len(dims), *dims)


def _resolve_code(arr: np.ndarray, dtype) -> int:
    if dtype is None:
        # anything that is not uint8/float64 is stored as float32
        return DTYPE_CODES.get(np.dtype(arr.dtype.name), 0)
    if isinstance(dtype, (int, np.integer)):
        if int(dtype) not in DTYPES:
            raise InvalidArgumentError(f"unknown dtype code {dtype}")
        return int(dtype)
    dt = np.dtype(dtype)
    try:
        return DTYPE_CODES[np.dtype(dt.name)]
    except KeyError:
        raise InvalidArgumentError(f"unsupported dtype {dt}") from None


def encode_tensor(values, dims: Sequence[int] | None = None, dtype=None) -> bytes:
    arr = np.asarray(values)
    code = _resolve_code(arr, dtype)
    dims = list(arr.shape) if dims is None else [int(d) for d in dims]
    if not 1 <= len(dims) <= MAX_NDIM:
        raise InvalidArgumentError(f"ndim must be in [1, {MAX_NDIM}], got {len(dims)}")
    if any(d < 0 or d >= 2**32 for d in dims):
        raise InvalidArgumentError(f"dims out of range: {dims}")
    if arr.size != int(np.prod(dims, dtype=np.int64)):
        raise InvalidArgumentError(f"{arr.size} values do not fill dims {dims}")
    payload = np.ascontiguousarray(arr.reshape(-1), dtype=DTYPES[code]).tobytes()
    return _header(dims, code) + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("bad magic")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise FormatError(f"bad ndim {ndim}")
    if len(buf) < 7 + 4 * ndim:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    offset = 7 + 4 * ndim
    dt = DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) - offset != expected:
        raise FormatError(f"payload is {len(buf) - offset} bytes, header declares {expected}")
    arr = np.frombuffer(buf, dtype=dt, offset=offset).reshape(dims)
    return arr.astype(dt.newbyteorder("="), copy=True)


def write_tensor(path, values, dims: Sequence[int] | None = None, dtype=None) -> None:
    """Write ``values`` as a tensor file.

    ``dims`` defaults to the array shape; when given, ``values`` may be flat.
    ``dtype`` may be a numpy dtype or a format code (0 float32, 1 uint8, 2 float64).
    """
    data = encode_tensor(values, dims, dtype)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def read_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    try:
        return decode_tensor(buf)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def write_json(path, obj) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e


# -- episodes -----------------------------------------------------------------


def write_episode(directory, episode: Episode) -> None:
    episode.check()
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {d}: {e}") from e
    meta = {
        "episode_id": episode.episode_id,
        "n_views": episode.n_views,
        "t_raw": episode.t_raw,
        "n_classes": episode.n_classes,
        "seed": int(episode.seed),
        "frame_labels": episode.frame_labels.astype(int).tolist(),
        "human_mask": episode.human_mask.astype(int).tolist(),
        "seq_label": episode.seq_label.astype(int).tolist(),
        "events": [e.to_json() for e in episode.events],
    }
    write_json(d / "meta.json", meta)
    for n in range(episode.n_views):
        write_tensor(d / f"view{n + 1}_visual.mtsf", episode.visual[n])
        write_tensor(d / f"view{n + 1}_audio.mtsf", episode.audio[n])


def read_episode(directory) -> Episode:
    d = Path(directory)
    if not (d / "meta.json").is_file():
        raise FormatError(f"{d}: missing meta.json")
    meta = read_json(d / "meta.json")
    try:
        n, t, c = int(meta["n_views"]), int(meta["t_raw"]), int(meta["n_classes"])
        frame_labels = np.asarray(meta["frame_labels"], dtype=np.uint8).reshape(t, c)
        human_mask = np.asarray(meta["human_mask"], dtype=np.uint8).reshape(n, t)
        seq_label = np.asarray(meta["seq_label"], dtype=np.uint8).reshape(c)
        events = [ActionEvent.from_json(e) for e in meta.get("events", [])]
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"{d}/meta.json: {e}") from e

    visual, audio = [], []
    for v in range(1, n + 1):
        for kind, out in (("visual", visual), ("audio", audio)):
            p = d / f"view{v}_{kind}.mtsf"
            if not p.is_file():
                raise FormatError(f"{d}: missing {p.name}")
            out.append(read_tensor(p))
    extra = sorted(
        p.name for p in d.glob("view*_*.mtsf")
        if p.name not in {f"view{v}_{k}.mtsf" for v in range(1, n + 1) for k in ("visual", "audio")}
    )
    if extra:
        raise FormatError(f"{d}: unexpected view files {extra} for N={n}")
    if any(a.ndim != 4 or a.shape[0] != t for a in visual) or len({a.shape for a in visual}) != 1:
        raise FormatError(f"{d}: visual tensors disagree with T_raw={t}")
    if any(a.ndim != 2 or a.shape[0] != t for a in audio) or len({a.shape for a in audio}) != 1:
        raise FormatError(f"{d}: audio tensors disagree with T_raw={t}")

    ep = Episode(
        episode_id=str(meta["episode_id"]),
        visual=np.stack(visual),
        audio=np.stack(audio),
        frame_labels=frame_labels,
        seq_label=seq_label,
        human_mask=human_mask,
        events=events,
        seed=int(meta["seed"]),
    )
    try:
        ep.check()
    except ValueError as e:
        raise FormatError(f"{d}: {e}") from e
    return ep


# -- datasets -----------------------------------------------------------------


def write_manifest(root, episode_ids: list[str], gen_config: dict, seed: int, splits: dict | None = None) -> dict:
    manifest = {"episode_ids": list(episode_ids), "gen_config": gen_config, "seed": int(seed)}
    if splits is not None:
        manifest["splits"] = splits
    write_json(Path(root) / "manifest.json", manifest)
    return manifest


def read_manifest(root) -> dict:
    p = Path(root) / "manifest.json"
    if not p.is_file():
        raise FormatError(f"{root}: missing manifest.json")
    m = read_json(p)
    if "episode_ids" not in m:
        raise FormatError(f"{p}: no episode_ids")
    return m


def load_dataset(root) -> dict[str, Episode]:
    """Read every episode listed in ``root/manifest.json``, keyed by id."""
    m = read_manifest(root)
    return {eid: read_episode(os.path.join(root, eid)) for eid in m["episode_ids"]}
