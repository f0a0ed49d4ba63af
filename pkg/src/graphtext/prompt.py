"""Classification heads built from the pre-trained text encoder.

Zero-shot: each class weight is the encoding of a discrete template with the
class label text substituted for ``[CLASS]``.  Few-shot: the template is
replaced by ``M`` trainable vectors in token-embedding space, prepended to
the label's token embeddings and tuned on the support set while both encoders
stay frozen.  Nodes are scored by cosine similarity between their graph
embedding and each class weight.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .corpus import PAD, GraphTextCorpus, Vocabulary, sample_neighbors, tokenize
from .numeric import Adam, NumericError, ShapeError, backward, l2_normalize_rows, row_cross_entropy
from .text_encoder import TextEncoder

log = logging.getLogger(__name__)

PLACEHOLDER = "[CLASS]"
INIT_MODES = ("context", "random", "zero")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class DiscretePrompt:
    """A template such as ``"a document about [CLASS]"``; empty means the label text alone."""

    template: str = PLACEHOLDER

    def __post_init__(self):
        if not self.template.strip():
            object.__setattr__(self, "template", PLACEHOLDER)
        if self.template.count(PLACEHOLDER) != 1:
            raise PromptError(f"template must contain exactly one {PLACEHOLDER} placeholder: {self.template!r}")

    def fill(self, label_text: str) -> str:
        return self.template.replace(PLACEHOLDER, label_text)


@dataclass
class ContinuousPrompt:
    vectors: torch.Tensor  # (M, width)
    sources: int = 0  # sequences averaged by context initialization

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


@contextlib.contextmanager
def frozen(module: nn.Module):
    """Disable gradients for every parameter of ``module`` inside the block."""
    flags = [(p, p.requires_grad) for p in module.parameters()]
    was_training = module.training
    module.eval()
    for p, _ in flags:
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, flag in flags:
            p.requires_grad_(flag)
        module.train(was_training)


def zero_shot_weights(encoder: TextEncoder, vocab: Vocabulary, label_texts: list[str],
                      template: DiscretePrompt | str = "") -> torch.Tensor:
    """Unit-norm class weights ``(N, d)`` from template-filled label texts."""
    if isinstance(template, str):
        template = DiscretePrompt(template)
    max_len = encoder.config.max_len
    toks = []
    for text in label_texts:
        t = tokenize(template.fill(text), vocab, max_len)
        if t.empty:
            raise PromptError(f"class label text {text!r} produced no tokens")
        if t.truncated:
            log.warning("prompt for class %r exceeds %d tokens; truncating the tail", text, max_len)
        toks.append(t)
    ids = np.stack([t.ids for t in toks])
    lengths = np.array([t.length for t in toks])
    return l2_normalize_rows(encoder.encode_ids(ids, lengths))


def few_shot_weights(encoder: TextEncoder, prompt: ContinuousPrompt | torch.Tensor,
                     class_tokens: list[np.ndarray]) -> torch.Tensor:
    """Encode ``[h_1..h_M, label token embeddings]`` per class; unit-norm ``(N, d)``."""
    vectors = prompt.vectors if isinstance(prompt, ContinuousPrompt) else prompt
    if vectors.dim() != 2 or vectors.shape[1] != encoder.width:
        raise ShapeError(f"prompt vectors {tuple(vectors.shape)} do not match encoder width {encoder.width}")
    max_len = encoder.config.max_len
    seqs = []
    for ids in class_tokens:
        label = encoder.token_embedding(torch.as_tensor(np.asarray(ids), dtype=torch.long))
        seq = torch.cat([vectors.to(label.dtype), label])
        if seq.shape[0] > max_len:
            log.warning("prompt plus class label exceeds %d positions; truncating the tail", max_len)
            seq = seq[:max_len]
        if seq.shape[0] == 0:
            raise PromptError("empty prompt and empty class label")
        seqs.append(seq)
    lengths = torch.tensor([s.shape[0] for s in seqs])
    L = int(lengths.max())
    batch = torch.stack([torch.cat([s, s.new_zeros(L - s.shape[0], s.shape[1])]) for s in seqs])
    return l2_normalize_rows(encoder.encode_text(encoder.embed_sequence(batch), lengths))


def cosine_logits(z: torch.Tensor, weights: torch.Tensor, logit_scale: float = 0.0) -> torch.Tensor:
    logits = l2_normalize_rows(z) @ l2_normalize_rows(weights).T
    return logits * logit_scale if logit_scale else logits


def classify(z: torch.Tensor, weights: torch.Tensor, logit_scale: float = 0.0):
    """Class probabilities from cosine similarity, and the argmax.

    ``z`` may be one embedding ``(d,)`` or a batch ``(B, d)``.  Ties go to the
    lowest class index.
    """
    single = z.dim() == 1
    zb = z.unsqueeze(0) if single else z
    probs = torch.softmax(cosine_logits(zb, weights, logit_scale), dim=1)
    pred = probs.argmax(dim=1)
    return (probs[0], int(pred[0])) if single else (probs, pred)


def prompt_loss(z: torch.Tensor, labels, weights: torch.Tensor, logit_scale: float = 0.0) -> torch.Tensor:
    """Mean cross-entropy of the cosine-similarity class scores of ``z``."""
    return row_cross_entropy(cosine_logits(z, weights, logit_scale), labels)


def init_prompt_from_context(corpus: GraphTextCorpus, token_table: torch.Tensor, support_ids, prompt_len: int,
                             eta: int, rng: np.random.Generator) -> ContinuousPrompt:
    """Average the first-``prompt_len`` token embeddings of each support
    document and of ``eta`` sampled neighbors of each."""
    if prompt_len < 1:
        raise ValueError("prompt length must be >= 1 for context initialization")
    rows = []
    for i in support_ids:
        for j in [int(i)] + sample_neighbors(corpus, int(i), eta, rng):
            ids = np.full(prompt_len, PAD, dtype=np.int64)
            take = min(prompt_len, corpus.max_len)
            ids[:take] = corpus.token_ids[j, :take]
            rows.append(ids)
    if not rows:
        raise ValueError("context initialization needs at least one support node")
    table = token_table.detach()
    seqs = table[torch.from_numpy(np.stack(rows))]
    return ContinuousPrompt(seqs.mean(dim=0).clone(), sources=len(rows))


def random_prompt(prompt_len: int, width: int, rng: np.random.Generator, std: float = 0.02) -> ContinuousPrompt:
    return ContinuousPrompt(torch.from_numpy(rng.normal(0.0, std, (prompt_len, width)).astype(np.float32)))


@dataclass
class PromptConfig:
    prompt_len: int = 4
    lr: float = 0.01
    epochs: int = 50
    init: str = "context"
    eta: int = 3
    logit_scale: float = 0.0

    def validate(self) -> None:
        if self.prompt_len < 0 or self.epochs < 0 or self.eta < 0:
            raise ValueError("prompt_len, epochs and eta must be non-negative")
        if not self.lr > 0:
            raise ValueError(f"prompt learning rate must be positive, got {self.lr}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.init == "context" and self.prompt_len < 1:
            raise ValueError("context initialization needs prompt_len >= 1")


@dataclass
class TuningResult:
    prompt: ContinuousPrompt
    best_epoch: int
    best_val_accuracy: float
    trainable_parameters: int
    losses: list[float] = field(default_factory=list)


def prompt_tune(model, corpus: GraphTextCorpus, task, config: PromptConfig, rng: np.random.Generator,
                node_embeddings: torch.Tensor | None = None,
                class_tokens: list[np.ndarray] | None = None) -> TuningResult:
    """Tune only the continuous prompt on the task's support set.

    The prompt is scored on the validation split before each update and after
    the last one; the best-scoring iterate (earliest on ties) is returned.
    """
    config.validate()
    encoder: TextEncoder = model.text
    support, support_y = task.support_pairs()
    val, val_y = task.validation_pairs()
    if len(support) == 0:
        raise ValueError("prompt tuning needs at least one support example (K >= 1)")
    if class_tokens is None:
        class_tokens = [corpus.class_tokens(c) for c in task.class_ids]

    with frozen(model):
        if node_embeddings is None:
            with torch.no_grad():
                node_embeddings = model.node_embeddings(corpus)
        z_support = node_embeddings[torch.as_tensor(support)]
        z_val = node_embeddings[torch.as_tensor(val)] if len(val) else None
        y_support = torch.as_tensor(support_y)

        if config.init == "context":
            init = init_prompt_from_context(corpus, encoder.token_embedding.weight, support, config.prompt_len,
                                            config.eta, rng)
        elif config.init == "random":
            init = random_prompt(config.prompt_len, encoder.width, rng)
        else:
            init = ContinuousPrompt(torch.zeros(config.prompt_len, encoder.width))

        h = nn.Parameter(init.vectors.clone().to(encoder.token_embedding.weight.dtype))
        opt = Adam([h], lr=config.lr)
        best = (-1.0, 0, h.detach().clone())
        losses = []
        for epoch in range(config.epochs + 1):
            weights = few_shot_weights(encoder, h, class_tokens)
            if z_val is not None:
                with torch.no_grad():
                    _, pred = classify(z_val, weights.detach(), config.logit_scale)
                acc = float((pred.numpy() == np.asarray(val_y)).mean())
            else:
                acc = 0.0
            if acc > best[0] or (z_val is None and epoch == config.epochs):
                best = (acc, epoch, h.detach().clone())
            if epoch == config.epochs:
                break
            loss = prompt_loss(z_support, y_support, weights, config.logit_scale)
            if not bool(torch.isfinite(loss)):
                raise NumericError(f"non-finite prompt-tuning loss at epoch {epoch}, support={list(support)}")
            losses.append(loss.item())
            backward(loss)
            opt.step()

    prompt = ContinuousPrompt(best[2], sources=init.sources)
    return TuningResult(prompt, best[1], best[0], opt.trainable_count, losses)
