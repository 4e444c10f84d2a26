"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    bytes 0-7    magic  b"AACPCKPT"
    bytes 8-11   u32    format version
    bytes 12-19  u64    header length H
    next H bytes        UTF-8 JSON header (sorted keys, compact separators)
    remainder           concatenated raw C-order array blobs

The header lists every blob with section, name, dtype, shape, offset and
byte count relative to the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..model.config import ModelConfig
from ..model.network import AACPNet
from .optim import OptimizerState

MAGIC = b"AACPCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = ("<f4", "<f8", "<i8")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: OptimizerState | None = None
    meta: dict = field(default_factory=dict)

    # -- model bridge -------------------------------------------------
    @classmethod
    def from_model(cls, model: AACPNet, optimizer: OptimizerState | None = None,
                   meta: dict | None = None) -> "Checkpoint":
        return cls(model.config.to_dict(), dict(model.state_dict()), model.head.extra_state(),
                   optimizer, dict(meta or {}))

    def build_model(self) -> AACPNet:
        model = AACPNet(ModelConfig.from_dict(self.model_config), seed=None)
        dtypes = {a.dtype for a in self.params.values()}
        if len(dtypes) == 1:
            model.astype(dtypes.pop())
        model.load_state_dict(self.params)
        model.head.load_extra_state(self.extra)
        return model

    # -- serialization ------------------------------------------------
    def to_bytes(self) -> bytes:
        sections = [("param", self.params), ("extra", self.extra)]
        if self.optimizer is not None:
            sections.append(("optim", self.optimizer.arrays()))
        blobs, chunks, offset = [], [], 0
        for section, arrays in sections:
            for name, arr in arrays.items():
                a = np.asarray(arr)
                a = a.astype(a.dtype.newbyteorder("<"), copy=False)
                if a.dtype.str not in _DTYPES:
                    raise CheckpointError(f"unsupported dtype {a.dtype} for {section}/{name}")
                raw = np.ascontiguousarray(a).tobytes()
                blobs.append({"section": section, "name": name, "dtype": a.dtype.str,
                              "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
                chunks.append(raw)
                offset += len(raw)
        header = {
            "model_config": self.model_config,
            "meta": self.meta,
            "optimizer": None if self.optimizer is None else self.optimizer.scalars(),
            "blobs": blobs,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if len(buf) < _PREFIX.size:
            raise CheckpointError("checkpoint truncated before header")
        magic, version, hlen = _PREFIX.unpack_from(buf)
        if magic != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        if version != VERSION:
            raise CheckpointVersionError(f"checkpoint format version {version}, expected {VERSION}")
        start = _PREFIX.size
        if len(buf) < start + hlen:
            raise CheckpointError("checkpoint truncated inside header")
        try:
            header = json.loads(buf[start:start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        payload = memoryview(buf)[start + hlen:]
        sections: dict[str, dict[str, np.ndarray]] = {"param": {}, "extra": {}, "optim": {}}
        end = 0
        for b in header["blobs"]:
            lo, n = b["offset"], b["nbytes"]
            if lo + n > len(payload):
                raise CheckpointError(f"checkpoint truncated in blob {b['section']}/{b['name']}")
            if b["dtype"] not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {b['dtype']}")
            arr = np.frombuffer(payload[lo:lo + n], dtype=np.dtype(b["dtype"]))
            sections[b["section"]][b["name"]] = arr.reshape(b["shape"]).copy()
            end = max(end, lo + n)
        if end != len(payload):
            raise CheckpointError("trailing bytes after the last blob")
        opt = header["optimizer"]
        optimizer = None if opt is None else OptimizerState.from_parts(opt, sections["optim"])
        return cls(header["model_config"], sections["param"], sections["extra"], optimizer, header["meta"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: temporary file in the same directory, then rename."""
    data = ckpt.to_bytes()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())
