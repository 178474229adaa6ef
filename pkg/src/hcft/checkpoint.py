"""Model checkpoints.

Layout (little-endian)::

    b"HCFT", u32 version
    u32 config length, canonical key=value config text (utf-8)
    tensor table until end of file, per tensor:
        u16 name length, name bytes, u8 rank, u32 extent per axis, f32 values
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, CheckpointError, MissingCheckpoint
from .model import HCFT, ModelConfig
from .tensor import precision

MAGIC = b"HCFT"
VERSION = 1


def dumps(model: HCFT) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    config = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(config)))
    buf.write(config)
    for name, value in model.state_dict().items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _read(view: memoryview, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(view):
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return bytes(view[pos:pos + n]), pos + n


def parse(raw: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    view = memoryview(raw)
    if bytes(view[:4]) != MAGIC:
        raise BadMagic("not an HCFT checkpoint")
    head, pos = _read(view, 4, 8, "header")
    version, n_config = struct.unpack("<II", head)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    text, pos = _read(view, pos, n_config, "config")
    config = ModelConfig.from_text(text.decode("utf-8"))
    state = {}
    while pos < len(view):
        chunk, pos = _read(view, pos, 2, "name length")
        name, pos = _read(view, pos, struct.unpack("<H", chunk)[0], "name")
        chunk, pos = _read(view, pos, 1, "rank")
        rank = chunk[0]
        chunk, pos = _read(view, pos, 4 * rank, "extents")
        shape = struct.unpack(f"<{rank}I", chunk)
        count = int(np.prod(shape)) if rank else 1
        chunk, pos = _read(view, pos, 4 * count, "values")
        state[name.decode("utf-8")] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
    return config, state


def loads(raw: bytes, dtype=np.float32) -> HCFT:
    config, state = parse(raw)
    with precision(dtype):
        model = HCFT(config)
    model.load_state_dict(state)
    return model.eval()


def save(model: HCFT, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load(path, dtype=np.float32) -> HCFT:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    return loads(path.read_bytes(), dtype)
