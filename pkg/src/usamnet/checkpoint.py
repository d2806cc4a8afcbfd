"""Single-file checkpoint container.

Layout::

    b"USAMCKPT\\n"                 9-byte magic
    uint64 little-endian          length of the JSON header in bytes
    JSON header (UTF-8)           sorted keys, no whitespace
    payload                       raw little-endian float32 arrays, back to back

The header records the model configuration, its hash, progress counters, the
training configuration and, for every array, its name, shape, byte offset
(relative to the payload start) and byte length.  Array names are prefixed
with ``param/``, ``buffer/``, ``adam_m/`` or ``adam_v/``.  Serialization is
canonical, so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointFormatError, IncompatibleCheckpointError
from .model import ModelConfig, UsamNet, build_model

MAGIC = b"USAMCKPT\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def config_hash(config: ModelConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    buffers: "OrderedDict[str, np.ndarray]"
    adam_m: list
    adam_v: list
    adam_t: int = 0
    epoch: int = 0
    batch_index: int = 0
    step: int = 0
    train_config: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.model_config)

    @property
    def adam(self):
        from .train import AdamState

        return AdamState(self.adam_m, self.adam_v, self.adam_t)


def snapshot(model: UsamNet, adam, epoch: int, batch_index: int, step: int, train_config=None) -> Checkpoint:
    """Copy the model and optimizer state into a :class:`Checkpoint`."""
    params = OrderedDict((n, p.data.astype(np.float32, copy=True)) for n, p in model.named_parameters())
    buffers = OrderedDict((n, b.astype(np.float32, copy=True)) for n, b in model.named_buffers())
    tc = train_config.to_dict() if hasattr(train_config, "to_dict") else dict(train_config or {})
    return Checkpoint(
        model.config,
        params,
        buffers,
        [m.astype(np.float32, copy=True) for m in adam.m],
        [v.astype(np.float32, copy=True) for v in adam.v],
        adam.t,
        epoch,
        batch_index,
        step,
        tc,
    )


def restore_model(model: UsamNet, ckpt: Checkpoint) -> UsamNet:
    if model.config != ckpt.model_config:
        raise IncompatibleCheckpointError(
            f"checkpoint was saved for {ckpt.model_config} (hash {ckpt.config_hash[:12]}), "
            f"model has {model.config} (hash {config_hash(model.config)[:12]})"
        )
    names = [n for n, _ in model.named_parameters()]
    if names != list(ckpt.params):
        raise IncompatibleCheckpointError("checkpoint parameter names do not match the model")
    state = OrderedDict(ckpt.params)
    state.update(ckpt.buffers)
    model.load_state_dict(state)
    return model


def model_from_checkpoint(ckpt: Checkpoint) -> UsamNet:
    return restore_model(build_model(ckpt.model_config, seed=0), ckpt)


def _entries(ckpt: Checkpoint):
    names = list(ckpt.params)
    if len(ckpt.adam_m) != len(names) or len(ckpt.adam_v) != len(names):
        raise CheckpointFormatError("optimizer state does not line up with parameters")
    for n, a in ckpt.params.items():
        yield f"param/{n}", a
    for n, a in ckpt.buffers.items():
        yield f"buffer/{n}", a
    for n, a in zip(names, ckpt.adam_m):
        yield f"adam_m/{n}", a
    for n, a in zip(names, ckpt.adam_v):
        yield f"adam_v/{n}", a


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name, arr in _entries(ckpt):
        blob = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": FORMAT_VERSION,
        "endianness": "little",
        "dtype": "float32",
        "model_config": ckpt.model_config.to_dict(),
        "config_hash": ckpt.config_hash,
        "adam_t": ckpt.adam_t,
        "epoch": ckpt.epoch,
        "batch_index": ckpt.batch_index,
        "step": ckpt.step,
        "train_config": ckpt.train_config,
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def from_bytes(raw: bytes, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointFormatError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + hlen:
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[pos : pos + hlen].decode())
        config = ModelConfig(**header["model_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION or header.get("endianness") != "little":
        raise CheckpointFormatError("unsupported checkpoint format")
    if header["config_hash"] != config_hash(config):
        raise CheckpointFormatError("stored config hash does not match the stored model config")
    if expected_config is not None and config != expected_config:
        raise IncompatibleCheckpointError(
            f"checkpoint config hash {header['config_hash'][:12]} differs from expected {config_hash(expected_config)[:12]}"
        )
    payload = memoryview(raw)[pos + hlen :]
    total = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != total:
        raise CheckpointFormatError(f"payload is {len(payload)} bytes, header promises {total} (truncated file?)")
    groups = {"param": OrderedDict(), "buffer": OrderedDict(), "adam_m": [], "adam_v": []}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        if count * _DTYPE.itemsize != t["nbytes"]:
            raise CheckpointFormatError(f"tensor {t['name']} size disagrees with its shape")
        arr = np.frombuffer(payload[t["offset"] : t["offset"] + t["nbytes"]], dtype=_DTYPE).astype(np.float32).reshape(t["shape"])
        kind, _, name = t["name"].partition("/")
        if kind in ("param", "buffer"):
            groups[kind][name] = arr
        elif kind in ("adam_m", "adam_v"):
            groups[kind].append(arr)
        else:
            raise CheckpointFormatError(f"unknown tensor group {kind!r}")
    return Checkpoint(
        config,
        groups["param"],
        groups["buffer"],
        groups["adam_m"],
        groups["adam_v"],
        int(header["adam_t"]),
        int(header["epoch"]),
        int(header["batch_index"]),
        int(header["step"]),
        header.get("train_config", {}),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: the file at ``path`` is either the old or the complete new checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(ckpt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expected_config)
