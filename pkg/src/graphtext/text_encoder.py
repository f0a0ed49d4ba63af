"""Transformer text encoder.

Maps a token sequence, or any sequence of vectors living in the token
embedding space, to a single ``output_dim`` text embedding.  Attention is
bidirectional with a key-padding mask, blocks use pre-layer-norm residual
wiring with GELU feed-forwards, and the sequence is pooled over its real
(non-padded) positions before a final linear projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import GraphTextCorpus
from .numeric import ShapeError

POOLING = ("mean", "last")


@dataclass
class TextEncoderConfig:
    layers: int = 2
    width: int = 64
    heads: int = 4
    max_len: int = 128
    vocab_size: int = 0
    output_dim: int = 128
    dropout: float = 0.0
    pooling: str = "mean"

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError("text encoder needs at least one layer")
        if self.width < 1 or self.heads < 1 or self.width % self.heads:
            raise ValueError(f"width {self.width} must be a positive multiple of heads {self.heads}")
        if self.max_len < 1 or self.output_dim < 1:
            raise ValueError("max_len and output_dim must be positive")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.pooling not in POOLING:
            raise ValueError(f"pooling must be one of {POOLING}, got {self.pooling!r}")


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, L, w = x.shape
        dh = w // self.heads
        q, k, v = self.qkv(x).split(w, dim=-1)
        q, k, v = (t.view(b, L, self.heads, dh).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(b, L, w)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads, dropout)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width), nn.Dropout(dropout)
        )

    def forward(self, x, key_mask):
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.mlp(self.ln2(x))


class TextEncoder(nn.Module):
    def __init__(self, config: TextEncoderConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        w = config.width
        self.token_embedding = nn.Embedding(config.vocab_size, w)
        self.position_embedding = nn.Parameter(torch.empty(config.max_len, w))
        self.blocks = nn.ModuleList(Block(w, config.heads, config.dropout) for _ in range(config.layers))
        self.ln_final = nn.LayerNorm(w)
        self.projection = nn.Parameter(torch.empty(w, config.output_dim))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        std = 0.02

        def normal_(p):
            nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std, generator=gen)

        for module in self.modules():
            if isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Linear):
                normal_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                normal_(module.weight)
        normal_(self.position_embedding)
        normal_(self.projection)

    @property
    def width(self) -> int:
        return self.config.width

    def embed_tokens(self, ids) -> torch.Tensor:
        """Token plus positional embedding, ``(..., L) -> (..., L, width)``."""
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id out of range for vocabulary of {self.config.vocab_size}")
        return self.embed_sequence(self.token_embedding(ids))

    def embed_sequence(self, vectors: torch.Tensor) -> torch.Tensor:
        """Add positional embeddings to vectors already in token-embedding space."""
        L = vectors.shape[-2]
        if L > self.config.max_len:
            raise ShapeError(f"sequence of length {L} exceeds max_len {self.config.max_len}")
        if vectors.shape[-1] != self.width:
            raise ShapeError(f"expected width {self.width}, got {vectors.shape[-1]}")
        return vectors + self.position_embedding[:L]

    def encode_text(self, x: torch.Tensor, lengths) -> torch.Tensor:
        """Encode embedded sequences ``(B, L, width)`` (or one ``(L, width)``).

        Positions at or beyond each sequence's length are masked out of
        attention and pooling, so they cannot influence the result.
        """
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        lengths = torch.as_tensor(lengths, dtype=torch.long).reshape(-1)
        if lengths.shape[0] != x.shape[0]:
            raise ShapeError(f"{x.shape[0]} sequences but {lengths.shape[0]} lengths")
        if bool((lengths < 1).any()) or bool((lengths > x.shape[1]).any()):
            raise ValueError(f"true lengths must lie in [1, {x.shape[1]}], got {lengths.tolist()}")

        L = int(lengths.max())
        x = x[:, :L]
        mask = torch.arange(L)[None, :] < lengths[:, None]
        for block in self.blocks:
            x = block(x, mask)
        x = self.ln_final(x)
        if self.config.pooling == "mean":
            m = mask.to(x.dtype).unsqueeze(-1)
            pooled = (x * m).sum(1) / lengths.to(x.dtype).unsqueeze(-1)
        else:
            pooled = x[torch.arange(x.shape[0]), lengths - 1]
        out = pooled @ self.projection
        return out[0] if single else out

    def encode_ids(self, ids, lengths) -> torch.Tensor:
        """Encode padded token-id rows ``(B, L)`` with their true lengths."""
        ids = torch.as_tensor(ids, dtype=torch.long)
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        L = int(lengths.max())
        return self.encode_text(self.embed_tokens(ids[:, :L]), lengths)


def encode_document(encoder: TextEncoder, corpus: GraphTextCorpus, node_id: int) -> torch.Tensor:
    n = int(corpus.lengths[node_id])
    x = encoder.embed_tokens(corpus.token_ids[node_id])
    return encoder.encode_text(x, n)


def encode_documents(encoder: TextEncoder, corpus: GraphTextCorpus, node_ids, chunk: int = 256) -> torch.Tensor:
    """Batched :func:`encode_document` over ``node_ids``; returns ``(len(node_ids), d)``."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    outs = []
    for start in range(0, len(node_ids), chunk):
        idx = node_ids[start : start + chunk]
        outs.append(encoder.encode_ids(corpus.token_ids[idx], corpus.lengths[idx]))
    if not outs:
        return torch.zeros(0, encoder.config.output_dim)
    return torch.cat(outs)
