"""Binary checkpoint container.

Layout::

    b"AGCKPT\\x00\\x01"                   8-byte magic
    uint64 little-endian                 header length in bytes
    header                               UTF-8 JSON, keys sorted
    payload                              little-endian float64, row-major

The header holds ``format_version``, ``seed``, free-form ``meta`` and an
ordered ``entries`` list of ``{"name", "shape", "offset"}`` where ``offset``
counts float64 values into the payload. Saving the result of a load
reproduces the original file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"AGCKPT\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    seed: int
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        entries, offset = [], 0
        for name, arr in self.params.items():
            arr = np.asarray(arr, dtype=np.float64)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
        header = json.dumps({"format_version": self.format_version, "seed": int(self.seed),
                             "meta": self.meta, "entries": entries},
                            sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                           for a in self.params.values())
        return MAGIC + struct.pack("<Q", len(header)) + header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {header.get('format_version')!r}")
        payload = np.frombuffer(blob[16 + hlen:], dtype="<f8")
        params = {}
        for e in header["entries"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            chunk = payload[e["offset"]:e["offset"] + n]
            if chunk.size != n:
                raise CheckpointError(f"truncated payload for {e['name']!r}")
            params[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
        return cls(params=params, seed=header["seed"], meta=header["meta"],
                   format_version=header["format_version"])

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(ckpt.to_bytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
