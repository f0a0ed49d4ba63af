"""Joint contrastive pre-training of the text and graph encoders."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .contrastive import (
    LOSS_TERMS,
    TAU_INIT,
    PairKind,
    clamp_temperature,
    npair_loss,
    parse_loss_terms,
    similarity_matrix,
    total_loss,
)
from .corpus import GraphTextCorpus
from .graph_encoder import GraphEncoder, GraphEncoderConfig, build_normalized_adjacency, pool_summaries, summary_sets
from .numeric import Adam, NumericError, backward
from .text_encoder import TextEncoder, TextEncoderConfig, encode_documents

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    epochs: int = 2
    batch_size: int = 64
    eta: int = 3
    lam: float = 0.1
    lr: float = 2e-5
    seed: int = 0
    loss_terms: tuple = LOSS_TERMS
    checkpoint: str | None = None

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.eta < 1:
            raise ValueError("epochs, batch_size and eta must all be >= 1")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        self.loss_terms = parse_loss_terms(self.loss_terms)


class DualEncoder(nn.Module):
    """Text encoder, graph encoder and the shared log-temperature."""

    def __init__(self, text_config: TextEncoderConfig, graph_config: GraphEncoderConfig, seed: int = 0):
        super().__init__()
        if text_config.output_dim != graph_config.output_dim:
            raise ValueError(
                f"text output_dim {text_config.output_dim} != graph output_dim {graph_config.output_dim}"
            )
        self.text = TextEncoder(text_config, seed=seed)
        self.graph = GraphEncoder(graph_config, seed=seed + 1)
        self.tau = nn.Parameter(torch.tensor(TAU_INIT))

    @property
    def logit_scale(self) -> float:
        return float(self.tau.detach().exp())

    def node_embeddings(self, corpus: GraphTextCorpus, adjacency=None) -> torch.Tensor:
        if adjacency is None:
            adjacency = build_normalized_adjacency(corpus)
        return self.graph(adjacency, torch.from_numpy(corpus.node_features).to(self.tau.dtype))


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    l1: float
    l2: float
    l3: float
    total: float
    exp_tau: float
    seconds: float

    def line(self) -> str:
        return (f"{self.epoch} {self.batch} {self.l1:.6f} {self.l2:.6f} {self.l3:.6f} "
                f"{self.total:.6f} {self.exp_tau:.6f} {self.seconds:.4f}")


@dataclass
class TrainLog:
    records: list[BatchRecord] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    HEADER = "# epoch batch L1 L2 L3 total expTau seconds"

    def append(self, rec: BatchRecord) -> None:
        if self.records and rec.batch <= self.records[-1].batch:
            raise ValueError("batch counter must increase monotonically")
        self.records.append(rec)

    def epoch_means(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for e in sorted({r.epoch for r in self.records}):
            rs = [r for r in self.records if r.epoch == e]
            out[e] = {k: float(np.mean([getattr(r, k) for r in rs])) for k in ("l1", "l2", "l3", "total", "exp_tau")}
        return out

    def lines(self) -> list[str]:
        return [self.HEADER] + [r.line() for r in self.records]

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write("\n".join(self.lines()) + "\n")


def batch_losses(model: DualEncoder, corpus: GraphTextCorpus, adjacency: torch.Tensor, features: torch.Tensor,
                 batch, sets: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Text-node, text-summary and node-summary losses for one batch.

    ``sets[k]`` lists the neighbors summarizing ``batch[k]``.  Every document
    involved is encoded once; the graph encoder runs over the full graph and
    the batch rows are selected.
    """
    batch = np.asarray(batch, dtype=np.int64)
    needed = np.unique(np.concatenate([batch, np.concatenate([np.asarray(s, dtype=np.int64) for s in sets])]))
    row_of = {int(j): r for r, j in enumerate(needed)}

    t_all = encode_documents(model.text, corpus, needed)
    t = t_all[torch.tensor([row_of[int(i)] for i in batch])]
    s = pool_summaries(t_all, sets, row_of)
    z = model.graph(adjacency, features)[torch.from_numpy(batch)]

    l1 = npair_loss(similarity_matrix(z, t, model.tau, PairKind.TEXT_NODE))
    l2 = npair_loss(similarity_matrix(t, s, model.tau, PairKind.TEXT_SUMMARY))
    l3 = npair_loss(similarity_matrix(z, s, model.tau, PairKind.NODE_SUMMARY))
    return l1, l2, l3


def pretrain(
    corpus: GraphTextCorpus,
    text_config: TextEncoderConfig,
    graph_config: GraphEncoderConfig,
    config: PretrainConfig,
    model: DualEncoder | None = None,
) -> tuple[DualEncoder, TrainLog]:
    """Train both encoders and the temperature on ``corpus``.

    Each epoch shuffles all documents into batches.  For every batch the
    documents and a fresh neighbor sample per document are encoded, a
    full-graph GCN pass supplies the node embeddings, and the enabled loss
    terms are combined and minimized with Adam.  Word-vector node features
    stay fixed.
    """
    config.validate()
    if model is None:
        model = DualEncoder(text_config, graph_config, seed=config.seed)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    adjacency = build_normalized_adjacency(corpus)
    features = torch.from_numpy(corpus.node_features)
    opt = Adam(model.parameters(), lr=config.lr)
    trainlog = TrainLog()
    n = corpus.num_nodes
    step = 0
    model.train()
    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            t0 = time.perf_counter()
            batch = order[start : start + config.batch_size]
            sets = summary_sets(corpus, batch, config.eta, rng)
            l1, l2, l3 = batch_losses(model, corpus, adjacency, features, batch, sets)
            loss = total_loss(l1, l2, l3, config.lam, config.loss_terms)
            if not bool(torch.isfinite(loss)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {step}: "
                    f"L1={l1.item()} L2={l2.item()} L3={l3.item()} tau={model.tau.item()} "
                    f"batch ids={batch.tolist()}"
                )
            backward(loss)
            opt.step()
            clamp_temperature(model.tau)

            trainlog.append(BatchRecord(epoch, step, l1.item(), l2.item(), l3.item(), loss.item(),
                                        model.logit_scale, time.perf_counter() - t0))
            step += 1
        trainlog.epoch_seconds.append(time.perf_counter() - epoch_start)
        log.info("epoch %d: %s", epoch, trainlog.epoch_means()[epoch])
    model.eval()
    if config.checkpoint:
        from .checkpoint import save_checkpoint

        save_checkpoint(config.checkpoint, model, vocab=corpus.vocab, word_vectors=corpus.word_vectors,
                        metadata={"seed": config.seed})
    return model, trainlog


def measure_epoch_scaling(
    sizes,
    text_config: TextEncoderConfig,
    graph_config: GraphEncoderConfig,
    config: PretrainConfig,
    synth_options: dict | None = None,
    epochs: int = 3,
) -> list[tuple[int, float]]:
    """Seconds per pre-training epoch on synthetic corpora of the given sizes.

    Every size runs ``epochs`` epochs and reports the median epoch time.
    Corpora grow by adding classes at a fixed ``docs_per_class``: with fixed
    block-model edge probabilities this keeps the degree distribution (and so
    the per-node neighbour-sampling and propagation cost) constant, so the
    measurement isolates the dependence on node count.
    """
    from .tasks import SynthConfig, generate_synthetic_corpus

    rows = []
    for size in sizes:
        opts = dict(synth_options or {})
        per_class = opts.get("docs_per_class", SynthConfig.docs_per_class)
        opts["classes"] = max(1, size // per_class)
        raw = generate_synthetic_corpus(SynthConfig(**opts), seed=config.seed)
        corpus = GraphTextCorpus.from_raw(raw, max_len=text_config.max_len, seed=config.seed,
                                          embedding_dim=graph_config.input_dim)
        tcfg = TextEncoderConfig(**{**text_config.__dict__, "vocab_size": len(corpus.vocab)})
        cfg = PretrainConfig(**{**config.__dict__, "epochs": epochs, "checkpoint": None})
        _, trainlog = pretrain(corpus, tcfg, graph_config, cfg)
        rows.append((corpus.num_nodes, float(np.median(trainlog.epoch_seconds))))
    return rows
