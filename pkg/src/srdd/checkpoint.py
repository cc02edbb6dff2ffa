"""Binary checkpoint container.

Layout, all integers little-endian::

    b"SRDD"                         magic
    u32 version                     currently 1
    u32 meta_len, meta_len bytes    UTF-8 JSON metadata
    u32 tensor_count
    per tensor:
        u32 name_len, name bytes (UTF-8)
        u32 rank, u32 dims[rank]
        f32 data[prod(dims)]

Nothing may follow the last tensor.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"SRDD"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptMagicError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


def encode(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CorruptMagicError("not an SRDD checkpoint (bad magic)")
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise UnknownVersionError(f"checkpoint version {version} not supported (reader handles {VERSION})")
    meta_len = r.u32("metadata length")
    try:
        metadata = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for i in range(r.u32("tensor count")):
        name = r.take(r.u32(f"name length of tensor {i}"), f"name of tensor {i}").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(4 * count, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after tensor table")
    return metadata, tensors


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    payload = encode(tensors, metadata)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


# ------------------------------------------------------------- model helpers


def model_tensors(model) -> dict[str, np.ndarray]:
    tensors = dict(model.state_dict())
    if model.frozen:
        tensors["dictionary.atoms"] = model.dictionary.atoms
        tensors["dictionary.code"] = model.code.code
    return tensors


def model_metadata(model) -> dict:
    c = model.config
    return {
        "scale": c.scale,
        "n_atoms": c.n_atoms,
        "feat_width": c.feat_width,
        "flags": {"batch_norm": c.batch_norm, "bottleneck_blocks": c.bottleneck_blocks,
                  "compensation": c.compensation},
        "frozen": model.frozen,
        "noise_seed": c.noise_seed,
        "model": c.to_dict(),
    }


def save_model(path, model, extra_meta: dict | None = None, extra_tensors: dict | None = None) -> None:
    meta = model_metadata(model)
    if extra_meta:
        meta.update(extra_meta)
    tensors = model_tensors(model)
    if extra_tensors:
        tensors.update(extra_tensors)
    save_checkpoint(path, tensors, meta)


def load_model(path):
    """Rebuild an :class:`~srdd.model.SRDD` from a checkpoint; returns (model, metadata, tensors)."""
    from .dictionary import Dictionary, DictionaryCode
    from .model import SRDD, ModelConfig

    meta, tensors = load_checkpoint(path)
    model = SRDD(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(tensors)
    if meta.get("frozen"):
        if "dictionary.atoms" not in tensors or "dictionary.code" not in tensors:
            raise CheckpointError("frozen checkpoint lacks dictionary.atoms / dictionary.code")
        model.dictionary = Dictionary(tensors["dictionary.atoms"].copy(), frozen=True)
        model.code = DictionaryCode(tensors["dictionary.code"].copy())
        model.generator.requires_grad_(False)
    return model, meta, tensors
