"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"G2P2CKPT"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: configs, tensor directory, vocabulary, metadata
    ...       float32 little-endian tensor blobs at the offsets in the header
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import GraphTextCorpus, Vocabulary
from .graph_encoder import GraphEncoderConfig
from .pretrain import DualEncoder
from .text_encoder import TextEncoderConfig

MAGIC = b"G2P2CKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
WORD_VECTORS = "corpus.word_vectors"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: DualEncoder
    vocab: Vocabulary
    word_vectors: np.ndarray | None
    metadata: dict = field(default_factory=dict)


def corpus_fingerprint(corpus: GraphTextCorpus) -> str:
    h = hashlib.sha256()
    for text in corpus.texts:
        h.update(text.encode("utf-8") + b"\n")
    h.update(np.ascontiguousarray(corpus.edges, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path, model: DualEncoder, vocab: Vocabulary, word_vectors: np.ndarray | None = None,
                    metadata: dict | None = None) -> None:
    blobs: list[bytes] = []
    directory = []
    offset = 0
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if word_vectors is not None:
        tensors[WORD_VECTORS] = np.asarray(word_vectors)
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "text_config": asdict(model.text.config),
        "graph_config": asdict(model.graph.config),
        "tensors": directory,
        "vocab": vocab.tokens,
        "metadata": {"created": time.strftime("%Y-%m-%dT%H:%M:%S"), **(metadata or {})},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads version {VERSION}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
    body = memoryview(raw)[_PREFIX.size + hlen :]

    arrays = {}
    for entry in header["tensors"]:
        chunk = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {entry['name']} is truncated")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).astype(np.float32)

    model = DualEncoder(TextEncoderConfig(**header["text_config"]), GraphEncoderConfig(**header["graph_config"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items() if k != WORD_VECTORS}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored configs: {exc}") from None
    model.eval()
    return Checkpoint(model, Vocabulary(header["vocab"]), arrays.get(WORD_VECTORS), header["metadata"])
