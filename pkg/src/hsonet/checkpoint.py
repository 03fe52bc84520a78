"""Versioned binary checkpoint container.

Layout (little endian)::

    b"HSON" | u32 format version | u64 header length | JSON header | tensor bytes

The header lists every tensor with its name, dtype, shape and byte offset
into the blob that follows, plus the schedule step, optimizer hyper-state,
metric history and the resolved run configuration.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"HSON"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, expected: int = FORMAT_VERSION):
        self.found, self.expected = found, expected
        super().__init__(f"checkpoint format version {found} is not supported (this build reads version {expected})")


@dataclass
class Checkpoint:
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None = None
    scheduler_state: dict[str, Any] | None = None
    t: int = 0
    history: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _tensor_entry(name: str, tensor: torch.Tensor, offset: int) -> tuple[dict, bytes]:
    arr = tensor.detach().cpu().contiguous().numpy()
    data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}, data


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    entries, blobs, offset = [], [], 0

    def add(name: str, tensor: torch.Tensor) -> None:
        nonlocal offset
        entry, data = _tensor_entry(name, tensor, offset)
        entries.append(entry)
        blobs.append(data)
        offset += len(data)

    for name, tensor in ckpt.model_state.items():
        add(f"model/{name}", tensor)

    optim_meta = None
    if ckpt.optimizer_state is not None:
        per_param = {}
        for idx, st in ckpt.optimizer_state["state"].items():
            scalars = {}
            for key, value in st.items():
                if torch.is_tensor(value) and value.dim() > 0:
                    add(f"optim/{idx}/{key}", value)
                else:
                    scalars[key] = float(value)
            per_param[str(idx)] = scalars
        optim_meta = {"param_groups": ckpt.optimizer_state["param_groups"], "scalars": per_param}

    header = {
        "format_version": FORMAT_VERSION,
        "t": int(ckpt.t),
        "history": ckpt.history,
        "config": ckpt.config,
        "optimizer": optim_meta,
        "scheduler": ckpt.scheduler_state,
        "tensors": entries,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for data in blobs:
            fh.write(data)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < _PREFIX.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version)
    start = _PREFIX.size
    header = json.loads(buf[start:start + hlen].decode("utf-8"))
    blob = memoryview(buf)[start + hlen:]

    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(blob[e["offset"]:e["offset"] + e["nbytes"]], dtype=np.dtype(e["dtype"]).newbyteorder("<"))
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())

    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    optim = None
    if header.get("optimizer") is not None:
        state: dict[int, dict] = {}
        for idx, scalars in header["optimizer"]["scalars"].items():
            st = {key: torch.tensor(val) for key, val in scalars.items()}
            state[int(idx)] = st
        for name, tensor in tensors.items():
            if name.startswith("optim/"):
                _, idx, key = name.split("/", 2)
                state.setdefault(int(idx), {})[key] = tensor
        state = {k: state[k] for k in sorted(state)}
        optim = {"state": state, "param_groups": header["optimizer"]["param_groups"]}
    return Checkpoint(
        model_state=model_state,
        optimizer_state=optim,
        scheduler_state=header.get("scheduler"),
        t=int(header["t"]),
        history=header.get("history", []),
        config=header.get("config", {}),
    )


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialized form, mainly for tests comparing two checkpoints."""
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "c.hson"
        save_checkpoint(ckpt, p)
        return p.read_bytes()

