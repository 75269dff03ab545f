"""Self-describing checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"TCS2SCK1"
    bytes 8..15   uint64 header length H
    next H bytes  UTF-8 JSON header
    remainder     tensor payload, each tensor row-major, little-endian

The header holds ``format`` (1), ``model_config``, ``train_config`` (may be
null), ``vocab_hash``, ``topic_vocab_hash``, ``topic_ids`` and ``tensors``: a
list of ``{name, dtype, shape, offset, nbytes}`` with offsets relative to the
start of the payload. Values are stored in their in-memory precision, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, TopicConvS2S
from .tensor import Tensor

MAGIC = b"TCS2SCK1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: TopicConvS2S
    vocab_hash: str
    topic_vocab_hash: str
    train_config: dict | None = None


def save_checkpoint(path, model: TopicConvS2S, vocab_hash: str, topic_vocab_hash: str,
                    train_config: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, t in model.params.named_tensors():
        arr = np.ascontiguousarray(t.data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes(order="C")
        entries.append({
            "name": name,
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "model_config": model.config.to_dict(),
        "train_config": train_config,
        "vocab_hash": vocab_hash,
        "topic_vocab_hash": topic_vocab_hash,
        "topic_ids": [int(i) for i in model.topic_ids],
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path, vocab_hash: str | None = None, topic_vocab_hash: str | None = None) -> Checkpoint:
    """Load a checkpoint; mismatching expected hashes raise ``CheckpointError``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if header.get("format") != 1:
        raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise CheckpointError(f"{path}: vocabulary hash mismatch (checkpoint was trained with a different vocabulary)")
    if topic_vocab_hash is not None and header["topic_vocab_hash"] != topic_vocab_hash:
        raise CheckpointError(f"{path}: topic vocabulary hash mismatch")
    payload = memoryview(data)[16 + hlen:]
    params = ModelParams()
    for entry in header["tensors"]:
        start = entry["offset"]
        buf = payload[start:start + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        t = Tensor(0.0, requires_grad=True, name=entry["name"])
        t.data = arr.copy()  # keep the stored precision
        params[entry["name"]] = t
    config = ModelConfig(**header["model_config"])
    model = TopicConvS2S(config, params, header["topic_ids"])
    return Checkpoint(model, header["vocab_hash"], header["topic_vocab_hash"], header.get("train_config"))
