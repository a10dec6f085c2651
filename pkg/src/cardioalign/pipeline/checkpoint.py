"""Binary checkpoint: magic, u32 header length, JSON header, little-endian float32 blobs.

The header lists every tensor by stable name with its shape, byte offset
(relative to the end of the header) and byte length, next to the stage tag,
the resolved run config, the model parts present, fitted tabular statistics
and the schema it was trained against.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..data.schema import TabularSchema
from ..data.tabular import TabularStats

MAGIC = b"CDALCKPT"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


class CorruptParameterError(CheckpointError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"corrupt parameter {name!r}: {detail}")
        self.name = name


@dataclass
class Checkpoint:
    stage: str
    config: dict
    parts: list[str]
    tensors: dict[str, np.ndarray]
    schema: dict | None = None
    tabular_stats: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def schema_obj(self) -> TabularSchema | None:
        return None if self.schema is None else TabularSchema.from_dict(self.schema)

    @property
    def stats_obj(self) -> TabularStats | None:
        return None if self.tabular_stats is None else TabularStats.from_dict(self.tabular_stats)

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {k: torch.from_numpy(v.copy()) for k, v in self.tensors.items()}


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype("<f4") for k, v in module.state_dict().items()}


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION, "stage": ckpt.stage, "config": ckpt.config,
        "parts": list(ckpt.parts), "tensors": entries, "schema": ckpt.schema,
        "schema_fingerprint": None if ckpt.schema is None else ckpt.schema_obj.fingerprint(),
        "tabular_stats": ckpt.tabular_stats, "extra": ckpt.extra,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    return _read(Path(path))[0]


def _read(path: Path):
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    data = path.read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')}, reader supports {FORMAT_VERSION}")
    return header, data[start + hlen:]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    header, body = _read(path)
    tensors = {}
    end = 0
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) * 4
        if e["nbytes"] != n:
            raise CorruptParameterError(e["name"], f"{e['nbytes']} bytes for shape {e['shape']}")
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if hi > len(body):
            raise CorruptParameterError(e["name"], f"blob ends at {hi}, file body has {len(body)}")
        tensors[e["name"]] = np.frombuffer(body[lo:hi], dtype="<f4").reshape(e["shape"]).copy()
        end = max(end, hi)
    if end != len(body):
        raise CheckpointError(f"{path}: {len(body) - end} trailing bytes after the last tensor")
    schema = header.get("schema")
    if schema is not None:
        fp = TabularSchema.from_dict(schema).fingerprint()
        if fp != header.get("schema_fingerprint"):
            raise CheckpointError(f"{path}: schema fingerprint mismatch")
    return Checkpoint(header["stage"], header["config"], header["parts"], tensors, schema,
                      header.get("tabular_stats"), header.get("extra", {}))


def load_into(module: torch.nn.Module, ckpt: Checkpoint, parts=None) -> list[str]:
    """Copy the tensors of ``parts`` (default: every part both sides have) into ``module``.

    Each module entry under a requested part must be present in the checkpoint
    with an identical shape. Returns the names that were loaded.
    """
    own = module.state_dict()
    if parts is None:
        parts = [p for p in ckpt.parts if hasattr(module, p)]
    missing_parts = [p for p in parts if p not in ckpt.parts]
    if missing_parts:
        raise CheckpointError(f"checkpoint (stage {ckpt.stage}) has no {missing_parts}")
    loaded = []
    for name, dst in own.items():
        if not name.startswith(tuple(f"{p}." for p in parts)):
            continue
        if name not in ckpt.tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        arr = ckpt.tensors[name]
        if tuple(dst.shape) != arr.shape:
            raise CheckpointError(
                f"shape drift for {name!r}: checkpoint {arr.shape}, model {tuple(dst.shape)}")
        with torch.no_grad():
            dst.copy_(torch.from_numpy(arr).to(dst.dtype))
        loaded.append(name)
    return loaded
