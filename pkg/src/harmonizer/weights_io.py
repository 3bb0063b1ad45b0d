"""Binary weights file.

Layout (all integers unsigned 32-bit little-endian)::

    b"AHWT"
    version
    header length, header JSON (config, vocabulary symbols, provenance)
    vocab hash (64 ASCII hex chars, sha256 of the vocabulary)
    tensor count
    per tensor: name length, name (UTF-8), rank, dims..., float32 LE data
    sha256 digest (32 bytes) of everything above
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .encoding import ChordVocab
from .model import ModelConfig, ModelWeights

MAGIC = b"AHWT"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


class UnsupportedVersionError(WeightsFormatError):
    pass


class VocabMismatchError(WeightsFormatError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def dumps_weights(w: ModelWeights, provenance: dict | None = None, version: int = VERSION) -> bytes:
    header = json.dumps({"config": w.config.to_dict(), "vocab": list(w.vocab.symbols),
                         "provenance": provenance or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(version))
    buf.write(_u32(len(header)))
    buf.write(header)
    buf.write(w.vocab.hash.encode("ascii"))
    buf.write(_u32(len(w.tensors)))
    for name, arr in w.tensors.items():
        raw = name.encode()
        buf.write(_u32(len(raw)))
        buf.write(raw)
        buf.write(_u32(arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError(f"truncated weights file (wanted {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads_weights(data: bytes, expected_vocab_hash: str | None = None) -> tuple[ModelWeights, dict]:
    """Parse a weights file; returns the weights and the stored provenance."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weights format version {version} (expected {VERSION})")
    if len(data) < 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise WeightsFormatError("weights file checksum mismatch (corrupted or truncated)")
    r.data = data[:-32]
    try:
        header = json.loads(r.take(r.u32()))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"unreadable header: {exc}") from None
    stored_hash = r.take(64).decode("ascii")
    vocab = ChordVocab(tuple(header["vocab"]))
    if vocab.hash != stored_hash:
        raise VocabMismatchError("vocabulary in file does not match its recorded hash")
    if expected_vocab_hash is not None and stored_hash != expected_vocab_hash:
        raise VocabMismatchError(
            f"weights vocabulary {stored_hash[:12]} differs from expected {expected_vocab_hash[:12]}")
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(r.data):
        raise WeightsFormatError("trailing bytes after tensor table")
    cfg = ModelConfig(**header["config"])
    return ModelWeights(cfg, vocab, tensors), header.get("provenance", {})


def save_weights(w: ModelWeights, path, provenance: dict | None = None) -> None:
    Path(path).write_bytes(dumps_weights(w, provenance))


def load_weights(path, expected_vocab_hash: str | None = None) -> ModelWeights:
    return loads_weights(Path(path).read_bytes(), expected_vocab_hash)[0]
