"""Versioned binary checkpoint format.

Layout (little-endian)::

    magic  b"SADVCKPT"
    u32    format version
    u64    config text length, then UTF-8 config text
    u32    tensor count
    per tensor:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u64 dims
        float64 payload, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SADVCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(config_text: str, tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    text = config_text.encode("utf-8")
    out.append(struct.pack("<Q", len(text)))
    out.append(text)
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    (text_len,) = take("<Q")
    text = _text(blob, pos, text_len)
    pos += text_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = _text(blob, pos, name_len)
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        end = pos + 8 * n
        if end > len(blob):
            raise CheckpointError("truncated checkpoint payload")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
        pos = end
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return text, tensors


def _text(blob: bytes, pos: int, n: int) -> str:
    if pos + n > len(blob):
        raise CheckpointError("truncated checkpoint")
    try:
        return blob[pos:pos + n].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"undecodable text in checkpoint: {exc}") from None


def save(path, config_text: str, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(config_text, tensors))


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
