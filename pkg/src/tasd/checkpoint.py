"""Binary checkpoint format.

Layout::

    b"TASD1"
    uint32 little-endian header length
    UTF-8 JSON header {"config", "vocab_sha256", "trained", "params": [{"name", "shape"}]}
    raw little-endian float64 values of every parameter, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .model import TasatgConfig, TasatgModel
from .text import Vocab

MAGIC = b"TASD1"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(model: TasatgModel) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "vocab_sha256": model.vocab.digest() if model.vocab is not None else None,
        "trained": bool(getattr(model, "trained", False)),
        "params": [{"name": k, "shape": list(p.shape)} for k, p in model.params.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(p.values.astype("<f8").tobytes(order="C") for p in model.params.values())
    return MAGIC + struct.pack("<I", len(head)) + head + body


def save_checkpoint(model: TasatgModel, path) -> None:
    Path(path).write_bytes(dumps_checkpoint(model))


def loads_checkpoint(blob: bytes, config: Optional[TasatgConfig] = None,
                     vocab: Optional[Vocab] = None) -> TasatgModel:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise CheckpointError("truncated checkpoint header")
    (head_len,) = struct.unpack("<I", blob[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(blob[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    pos += head_len

    stored_cfg = TasatgConfig(**header["config"])
    cfg = config or stored_cfg
    if vocab is not None and header["vocab_sha256"] not in (None, vocab.digest()):
        raise CheckpointError("checkpoint was trained with a different vocabulary")
    model = TasatgModel(cfg, vocab)
    expected = {k: p.shape for k, p in model.params.items()}

    state = {}
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"checkpoint parameter {name} does not exist in this config")
        if shape != expected[name]:
            raise CheckpointError(f"parameter {name}: checkpoint shape {shape} does not match "
                                  f"config shape {expected[name]}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {name}")
        state[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                    offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing[:5]}")
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    model.load_state_dict(state)
    model.trained = bool(header.get("trained", False))
    return model


def load_checkpoint(path, config: Optional[TasatgConfig] = None,
                    vocab: Optional[Vocab] = None) -> TasatgModel:
    return loads_checkpoint(Path(path).read_bytes(), config, vocab)
