"""Two-layer GCN node encoder and neighborhood summary embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import GraphTextCorpus, sample_neighbors
from .numeric import ShapeError

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


@dataclass
class GraphEncoderConfig:
    input_dim: int = 128
    hidden_dim: int = 128
    output_dim: int = 128

    def validate(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError("graph encoder dimensions must be positive")


def build_normalized_adjacency(corpus_or_edges, num_nodes: int | None = None) -> torch.Tensor:
    """Sparse ``D^-1/2 (A + I) D^-1/2`` for an undirected graph.

    Accepts a corpus, or an ``(E, 2)`` edge array together with ``num_nodes``.
    """
    if isinstance(corpus_or_edges, GraphTextCorpus):
        edges, n = corpus_or_edges.edges, corpus_or_edges.num_nodes
    else:
        edges, n = np.asarray(corpus_or_edges, dtype=np.int64).reshape(-1, 2), num_nodes
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    edges = edges[edges[:, 0] != edges[:, 1]]
    loops = np.arange(n)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    adj = torch.sparse_coo_tensor(
        torch.from_numpy(np.stack([rows, cols])), torch.from_numpy(vals.astype(np.float32)), (n, n),
        check_invariants=False,
    )
    return adj.coalesce()


class GraphEncoder(nn.Module):
    """``Z = A_hat . LeakyReLU(A_hat X W1) W2``; the output layer is linear."""

    def __init__(self, config: GraphEncoderConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        self.w1 = nn.Parameter(torch.empty(config.input_dim, config.hidden_dim))
        self.w2 = nn.Parameter(torch.empty(config.hidden_dim, config.output_dim))
        gen = torch.Generator().manual_seed(seed)
        for w in (self.w1, self.w2):
            nn.init.xavier_uniform_(w, generator=gen)

    def forward(self, adjacency: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        n = adjacency.shape[0]
        if features.dim() != 2 or features.shape[0] != n or features.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"features {tuple(features.shape)} incompatible with adjacency {tuple(adjacency.shape)} "
                f"and input_dim {self.config.input_dim}"
            )
        adjacency = adjacency.to(features.dtype)
        h = F.leaky_relu(torch.sparse.mm(adjacency, features @ self.w1), LEAKY_SLOPE)
        return torch.sparse.mm(adjacency, h @ self.w2)


def encode_nodes(encoder: GraphEncoder, adjacency: torch.Tensor, features) -> torch.Tensor:
    return encoder(adjacency, torch.as_tensor(features, dtype=encoder.w1.dtype))


def summary_sets(corpus: GraphTextCorpus, node_ids, eta: int, rng: np.random.Generator) -> list[list[int]]:
    """Neighbor sample per node for the summary embedding.

    An isolated node summarizes itself.
    """
    sets = []
    for i in node_ids:
        neigh = sample_neighbors(corpus, int(i), eta, rng)
        if not neigh:
            log.debug("node %d has no neighbors; summary falls back to its own text", i)
            neigh = [int(i)]
        sets.append(neigh)
    return sets


def pool_summaries(text_embeddings: torch.Tensor, sets: list[list[int]], row_of=None) -> torch.Tensor:
    """Mean of ``text_embeddings`` rows over each set.

    ``row_of`` maps node ids to rows when ``text_embeddings`` holds only a
    subset of the corpus.
    """
    rows = []
    for s in sets:
        idx = torch.tensor([row_of[j] for j in s] if row_of is not None else s, dtype=torch.long)
        rows.append(text_embeddings[idx].mean(dim=0))
    return torch.stack(rows)


def summary_embedding(text_embeddings: torch.Tensor, corpus: GraphTextCorpus, node_id: int, eta: int,
                      rng: np.random.Generator) -> torch.Tensor:
    """Mean text embedding over up to ``eta`` sampled neighbors of ``node_id``."""
    return pool_summaries(text_embeddings, summary_sets(corpus, [node_id], eta, rng))[0]
