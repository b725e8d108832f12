"""Named-tensor archive: little-endian float64 payload behind a JSON header.

Layout::

    b"DDPC" | u32 version | u32 header_len | header (utf-8 JSON) | f64 data...

The header lists groups in order, each with its trainable flag and the
name/shape of every tensor; the payload is the tensors concatenated in the
same order.  An optional ``config`` mapping rides along in the header so a
loader can validate shapes before building a model.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import BadMagicError, ShapeMismatchError, TruncatedFileError, VersionMismatchError

MAGIC = b"DDPC"
VERSION = 1


def dump_archive(groups, config=None, extra=None):
    header = {
        "config": config or {},
        "extra": extra or {},
        "groups": [
            {
                "name": g.name,
                "trainable": bool(g.trainable),
                "tensors": [{"name": n, "shape": list(t.shape)} for n, t in g.items()],
            }
            for g in groups
        ],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for g in groups:
        for _, t in g.items():
            chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def parse_archive(buf):
    """Return (header, {group: {tensor: ndarray}})."""
    if len(buf) < 12:
        raise TruncatedFileError("checkpoint shorter than its fixed header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    if len(buf) < 12 + hlen:
        raise TruncatedFileError("checkpoint header truncated")
    header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    off = 12 + hlen
    arrays = {}
    for g in header["groups"]:
        arrays[g["name"]] = {}
        for t in g["tensors"]:
            shape = tuple(t["shape"])
            n = int(np.prod(shape)) if shape else 1
            end = off + 8 * n
            if end > len(buf):
                raise TruncatedFileError(f"payload truncated in {g['name']}.{t['name']}")
            arrays[g["name"]][t["name"]] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off = end
    if off != len(buf):
        raise TruncatedFileError(f"{len(buf) - off} trailing bytes after payload")
    return header, arrays


def load_into(groups, header, arrays):
    """Copy archived values into existing groups, checking names and shapes."""
    by_name = {g["name"]: g for g in header["groups"]}
    for g in groups:
        if g.name not in by_name:
            raise ShapeMismatchError(f"group {g.name!r} missing from checkpoint")
        for name, t in g.items():
            src = arrays[g.name].get(name)
            if src is None or src.shape != t.shape:
                got = None if src is None else src.shape
                raise ShapeMismatchError(f"{g.name}.{name}: expected {t.shape}, found {got}")
            t.data = src.copy()
        g.set_trainable(by_name[g.name]["trainable"])


def save(path, groups, config=None, extra=None):
    with open(path, "wb") as fh:
        fh.write(dump_archive(groups, config, extra))


def load(path):
    with open(path, "rb") as fh:
        return parse_archive(fh.read())
