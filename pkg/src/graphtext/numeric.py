"""Shape-checked tensor primitives, gradient plumbing and the Adam optimizer.

Everything here is a thin layer over torch: tensors are ``torch.Tensor`` in
float32, trainable weights are ``torch.nn.Parameter`` and reverse-mode
differentiation is torch autograd.  The wrappers exist to give the rest of
the package one place that enforces the contracts the model code relies on
(row-wise ops on 2-D inputs, structured errors, epsilon-guarded norms).
"""

from __future__ import annotations

import logging
import math
from typing import Iterable

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

DTYPE = torch.float32
NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values."""


_zero_row_events = 0


def zero_row_events() -> int:
    """Number of zero rows seen by :func:`l2_normalize_rows` so far."""
    return _zero_row_events


def tensor(data, dtype: torch.dtype = DTYPE) -> torch.Tensor:
    return torch.as_tensor(data, dtype=dtype)


def _require_2d(name: str, x: torch.Tensor) -> None:
    if x.dim() != 2:
        raise ShapeError(f"{name}: expected a 2-D tensor, got shape {tuple(x.shape)}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ, {tuple(a.shape)} x {tuple(b.shape)}"
        )
    return a @ b


def row_softmax(x: torch.Tensor) -> torch.Tensor:
    _require_2d("row_softmax", x)
    shifted = x - x.max(dim=1, keepdim=True).values.detach()
    e = shifted.exp()
    return e / e.sum(dim=1, keepdim=True)


def row_cross_entropy(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean over rows of ``-log softmax(logits)[row, target]``."""
    _require_2d("row_cross_entropy", logits)
    targets = torch.as_tensor(targets, dtype=torch.long)
    m, n = logits.shape
    if targets.shape != (m,):
        raise ShapeError(
            f"row_cross_entropy: {m} rows but {tuple(targets.shape)} targets"
        )
    if m and (targets.min() < 0 or targets.max() >= n):
        bad = targets[(targets < 0) | (targets >= n)][0].item()
        raise IndexError(f"row_cross_entropy: target {bad} out of range for {n} classes")
    return F.cross_entropy(logits, targets)


def l2_normalize_rows(x: torch.Tensor) -> torch.Tensor:
    """Scale each row to unit Euclidean norm.

    A zero row cannot be normalized; it is divided by ``NORM_EPS`` instead
    (leaving it zero) and counted in :func:`zero_row_events`.
    """
    global _zero_row_events
    _require_2d("l2_normalize_rows", x)
    norms = torch.linalg.vector_norm(x, dim=1, keepdim=True)
    zero = norms.detach() == 0
    if bool(zero.any()):
        count = int(zero.sum())
        _zero_row_events += count
        log.warning("l2_normalize_rows: %d zero row(s), using epsilon-guarded norm", count)
        norms = norms + zero.to(norms.dtype) * NORM_EPS
    return x / norms


def backward(loss: torch.Tensor) -> None:
    if loss.numel() != 1 or loss.dim() != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any trainable parameter")
    loss.backward()


def require_finite(value: torch.Tensor, what: str, **context) -> None:
    if not bool(torch.isfinite(value).all()):
        details = ", ".join(f"{k}={v}" for k, v in context.items())
        raise NumericError(f"non-finite {what}" + (f" ({details})" if details else ""))


class Adam:
    """Adam with bias correction; ``step`` applies the update and clears gradients.

    Parameters whose gradient was never populated are left untouched.
    """

    def __init__(
        self,
        params: Iterable[torch.nn.Parameter],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not (lr > 0 and math.isfinite(lr)):
            raise ValueError(f"Adam: learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self._opt = torch.optim.Adam(
            self.params, lr=lr, betas=(beta1, beta2), eps=eps, foreach=False
        )

    @property
    def trainable_count(self) -> int:
        return sum(p.numel() for p in self.params)

    def step(self) -> None:
        self._opt.step()
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.grad.zero_()
