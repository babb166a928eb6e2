"""Versioned binary checkpoint: config, class names, normalization stats,
parameters, optimizer moments, and the run's RNG bookkeeping.

Layout (all integers little-endian):

    magic   8 bytes  b"DVITCKPT"
    u32     format version (currently 1)
    u64     header length, then that many bytes of UTF-8 JSON
    u32     tensor count
    per tensor:
        u16     name length, then the UTF-8 name
        u8      ndim
        u64[ndim] dims
        f8[prod(dims)] row-major little-endian float64 payload

The JSON header carries the model config, the ordered class-name list,
per-channel normalization mean/std, optimizer hyperparameters and step
count (moments travel as "opt.m.*" / "opt.v.*" tensors), and
{seed, epochs_completed} from which every RNG substream of the run can be
re-derived. Loading rejects bad magic, unknown versions, unknown tensor
names, and any shape mismatch with a CheckpointError naming the problem.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, param_shapes
from .tensor import Tensor

MAGIC = b"DVITCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    class_names: tuple[str, ...]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    optimizer: Optional[dict]  # {"t", "lr", "beta1", "beta2", "eps", "weight_decay", "m", "v"}
    rng: Optional[dict]  # {"seed", "epochs_completed"}
    run: Optional[dict]  # resolved run configuration, informational


def _write_tensor(buf: io.BufferedIOBase, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read_exact(buf: io.BufferedIOBase, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(raw)}")
    return raw


def _read_tensor(buf: io.BufferedIOBase) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(buf, 2))
    name = _read_exact(buf, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(buf, 1))
    shape = tuple(struct.unpack("<Q", _read_exact(buf, 8))[0] for _ in range(ndim))
    count = 1
    for dim in shape:
        count *= dim
    data = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(
    path,
    params: ModelParams,
    class_names,
    norm_mean,
    norm_std,
    optimizer: Optional[dict] = None,
    rng: Optional[dict] = None,
    run: Optional[dict] = None,
) -> None:
    header = {
        "config": params.config.to_dict(),
        "class_names": list(class_names),
        "norm_mean": [float(x) for x in np.asarray(norm_mean).reshape(-1)],
        "norm_std": [float(x) for x in np.asarray(norm_std).reshape(-1)],
        "optimizer": None,
        "rng": dict(rng) if rng else None,
        "run": dict(run) if run else None,
    }
    moment_tensors: list[tuple[str, np.ndarray]] = []
    if optimizer is not None:
        header["optimizer"] = {
            k: optimizer[k] for k in ("t", "lr", "beta1", "beta2", "eps", "weight_decay")
        }
        for name, arr in optimizer["m"].items():
            moment_tensors.append((f"opt.m.{name}", arr))
        for name, arr in optimizer["v"].items():
            moment_tensors.append((f"opt.v.{name}", arr))

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        named = [(name, t.data) for name, t in params.items()] + moment_tensors
        fh.write(struct.pack("<I", len(named)))
        for name, data in named:
            _write_tensor(fh, name, data)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            tensors = dict(_read_tensor(fh) for _ in range(count))
        except (UnicodeDecodeError, ValueError, struct.error) as exc:
            raise CheckpointError(f"corrupt tensor section: {exc}") from None

    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config in checkpoint header: {exc}") from None

    expected = param_shapes(config)
    param_tensors: dict[str, Tensor] = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"parameter '{name}' has shape {tensors[name].shape}, config requires {shape}"
            )
        param_tensors[name] = Tensor(tensors[name], requires_grad=True)

    optimizer = header.get("optimizer")
    if optimizer is not None:
        m, v = {}, {}
        for name, shape in expected.items():
            for prefix, store in (("opt.m.", m), ("opt.v.", v)):
                key = prefix + name
                if key not in tensors:
                    raise CheckpointError(f"checkpoint is missing optimizer tensor '{key}'")
                if tensors[key].shape != shape:
                    raise CheckpointError(
                        f"optimizer tensor '{key}' has shape {tensors[key].shape}, expected {shape}"
                    )
                store[name] = tensors[key].copy()
        optimizer = dict(optimizer, m=m, v=v)

    known = set(expected) | {p + n for n in expected for p in ("opt.m.", "opt.v.")}
    unknown = sorted(set(tensors) - known)
    if unknown:
        raise CheckpointError(f"checkpoint contains unknown tensors: {unknown}")

    return Checkpoint(
        config=config,
        params=ModelParams(config, param_tensors),
        class_names=tuple(header.get("class_names", ())),
        norm_mean=np.asarray(header.get("norm_mean", [0.0] * config.channels), dtype=np.float64),
        norm_std=np.asarray(header.get("norm_std", [1.0] * config.channels), dtype=np.float64),
        optimizer=optimizer,
        rng=header.get("rng"),
        run=header.get("run"),
    )
