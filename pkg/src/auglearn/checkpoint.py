"""Parameter checkpoints: a small self-describing binary format.

Layout: magic bytes "AUGL", format version as u16, then one record per
tensor: name length (u16), UTF-8 name, rank (u16), dims (u64 each), then
the payload as little-endian float64. Records run to end of file. Names
are "<group>.<param>" so a file can carry several parameter sets (the
classifier under "theta", the augmenter under "phi").

Writes go to a temp file in the target directory and are renamed into
place, so a crash never leaves a half-written checkpoint at the final
path.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np
import torch

from .errors import ContractViolation, IngestionError
from .params import ParamSet

MAGIC = b"AUGL"
VERSION = 1

_HEAD = struct.Struct("<4sH")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


def write_checkpoint(path, groups: dict[str, ParamSet]) -> None:
    """Write named parameter sets to ``path`` atomically."""
    path = os.fspath(path)
    for gname in groups:
        if not gname or "." in gname:
            raise ContractViolation(f"group name {gname!r} must be non-empty and dot-free")
    out = bytearray()
    out += _HEAD.pack(MAGIC, VERSION)
    for gname, ps in groups.items():
        for name, t in ps:
            full = f"{gname}.{name}".encode("utf-8")
            if len(full) > 0xFFFF:
                raise ContractViolation(f"parameter name too long: {len(full)} bytes")
            out += _U16.pack(len(full))
            out += full
            arr = t.detach().to(torch.float64).numpy()
            out += _U16.pack(arr.ndim)
            for d in arr.shape:
                out += _U64.pack(d)
            out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(out))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IngestionError("truncated file", path=self.path)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def read_checkpoint(path) -> dict[str, ParamSet]:
    """Read a checkpoint back as {group: ParamSet}; tensors are float64."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestionError(str(e), path=path) from e
    r = _Reader(data, path)
    magic, version = _HEAD.unpack(r.take(_HEAD.size))
    if magic != MAGIC:
        raise IngestionError(f"bad magic {magic!r}, expected {MAGIC!r}", path=path)
    if version != VERSION:
        raise IngestionError(f"unsupported format version {version}", path=path)
    groups: dict[str, list[tuple[str, torch.Tensor]]] = {}
    while not r.done:
        nlen = r.u16()
        try:
            full = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise IngestionError(f"undecodable name: {e}", path=path) from e
        if "." not in full:
            raise IngestionError(f"record name {full!r} lacks a group prefix", path=path)
        gname, pname = full.split(".", 1)
        rank = r.u16()
        dims = tuple(r.u64() for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        if count > 100_000_000:
            raise IngestionError(f"record {full!r} claims {count} elements", path=path)
        raw = r.take(count * 8)
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        groups.setdefault(gname, []).append((pname, torch.from_numpy(arr)))
    return {g: ParamSet(tuple(items)) for g, items in groups.items()}
