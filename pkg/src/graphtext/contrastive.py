"""In-batch contrastive objectives aligning text, node and neighborhood-summary
embeddings.

For two ``(n, d)`` matrices whose i-th rows describe the same node, the
similarity matrix holds temperature-scaled cosine similarities and the
diagonal marks the matching pairs.  The loss is the symmetric (row-wise and
column-wise) multi-class N-pair cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch

from .numeric import ShapeError, l2_normalize_rows, row_cross_entropy

TAU_INIT = math.log(1 / 0.07)
MAX_LOGIT_SCALE = 100.0
LOSS_TERMS = ("L1", "L2", "L3")


class PairKind(str, Enum):
    TEXT_NODE = "text-node"
    TEXT_SUMMARY = "text-summary"
    NODE_SUMMARY = "node-summary"


@dataclass
class SimilarityBatch:
    matrix: torch.Tensor
    kind: PairKind | None = None

    @property
    def labels(self) -> torch.Tensor:
        return torch.arange(self.matrix.shape[0])

    def transpose(self) -> "SimilarityBatch":
        return SimilarityBatch(self.matrix.T, self.kind)


def similarity_matrix(a: torch.Tensor, b: torch.Tensor, tau: torch.Tensor | float,
                      kind: PairKind | None = None) -> SimilarityBatch:
    """``normalize(a) @ normalize(b).T * exp(tau)``; row i of ``a`` pairs with row i of ``b``."""
    if a.dim() != 2 or a.shape != b.shape:
        raise ShapeError(f"similarity_matrix: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    if a.shape[0] == 0:
        raise ShapeError("similarity_matrix: empty batch")
    tau = torch.as_tensor(tau, dtype=a.dtype)
    return SimilarityBatch((l2_normalize_rows(a) @ l2_normalize_rows(b).T) * tau.exp(), kind)


def npair_loss(batch: SimilarityBatch | torch.Tensor) -> torch.Tensor:
    m = batch.matrix if isinstance(batch, SimilarityBatch) else batch
    if m.dim() != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"npair_loss: expected a square matrix, got {tuple(m.shape)}")
    y = torch.arange(m.shape[0])
    return 0.5 * (row_cross_entropy(m, y) + row_cross_entropy(m.T, y))


def total_loss(l1, l2, l3, lam: float, terms=LOSS_TERMS):
    """``l1 + lam * (l2 + l3)`` restricted to the enabled ``terms``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    terms = set(terms)
    unknown = terms - set(LOSS_TERMS)
    if unknown or not terms:
        raise ValueError(f"loss terms must be a non-empty subset of {LOSS_TERMS}, got {sorted(terms)}")
    total = 0.0
    if "L1" in terms:
        total = total + l1
    summary = 0.0
    if "L2" in terms:
        summary = summary + l2
    if "L3" in terms:
        summary = summary + l3
    if "L2" in terms or "L3" in terms:
        total = total + lam * summary
    return total


def clamp_temperature(tau: torch.nn.Parameter) -> None:
    """Keep ``exp(tau) <= MAX_LOGIT_SCALE`` (applied after each optimizer step)."""
    with torch.no_grad():
        tau.clamp_(max=math.log(MAX_LOGIT_SCALE))


def parse_loss_terms(spec: str | tuple | list) -> tuple[str, ...]:
    """``"L1,L2"`` / ``"L1+L3"`` / ``("L1",)`` -> canonical ordered tuple."""
    if isinstance(spec, str):
        parts = [p.strip().upper() for p in spec.replace("+", ",").split(",") if p.strip()]
    else:
        parts = [str(p).upper() for p in spec]
    bad = [p for p in parts if p not in LOSS_TERMS]
    if bad or not parts:
        raise ValueError(f"invalid loss-term mask {spec!r}; use a subset of {','.join(LOSS_TERMS)}")
    return tuple(t for t in LOSS_TERMS if t in parts)
