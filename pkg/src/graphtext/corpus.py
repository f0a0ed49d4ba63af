"""Graph-grounded text corpus: one document per node, undirected edges,
optional labels and class label texts.

On disk a corpus is a directory of tab-separated files::

    documents.tsv   node_id <TAB> raw text
    edges.tsv       src_id <TAB> dst_id
    labels.tsv      node_id <TAB> class_id          (optional)
    classes.tsv     class_id <TAB> label text       (optional)
    vocab.tsv       id <TAB> token                  (optional, cached)
    embeddings.f32  word vectors                    (optional, cached)

Node ids are assigned by order of appearance in ``documents.tsv``.
"""

from __future__ import annotations

import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

EMB_MAGIC = b"WEMB"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIII")

_WORD_RE = re.compile(r"\w+")


class CorpusError(ValueError):
    """Invalid or inconsistent corpus files."""


# --------------------------------------------------------------------------
# Vocabulary and tokenization
# --------------------------------------------------------------------------


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            tokens = [PAD_TOKEN, UNK_TOKEN] + [t for t in tokens if t not in (PAD_TOKEN, UNK_TOKEN)]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise CorpusError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2, always: Iterable[str] = ()) -> "Vocabulary":
        """Corpus vocabulary: words seen at least ``min_freq`` times, plus ``always``.

        Ordered by descending frequency, then alphabetically.
        """
        counts = Counter()
        for text in texts:
            counts.update(split_words(text))
        keep = {w for w, c in counts.items() if c >= min_freq}
        for text in always:
            keep.update(split_words(text))
        ordered = sorted(keep, key=lambda w: (-counts.get(w, 0), w))
        return cls(ordered)

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.tokens):
                f.write(f"{i}\t{tok}\n")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        tokens = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or not parts[0].isdigit() or int(parts[0]) != len(tokens):
                    raise CorpusError(f"{path}:{lineno}: expected '<id>\\t<token>' with consecutive ids")
                tokens.append(parts[1])
        return cls(tokens)


@dataclass(frozen=True)
class TokenizedText:
    ids: np.ndarray  # int64, padded to max_len
    length: int
    truncated: bool

    @property
    def empty(self) -> bool:
        return self.length == 0


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenizedText:
    """Lowercase, split on whitespace/punctuation, map to ids, keep the first
    ``max_len`` tokens and pad with ``PAD``."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    words = split_words(text)
    truncated = len(words) > max_len
    words = words[:max_len]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[: len(words)] = [vocab.id(w) for w in words]
    return TokenizedText(ids, len(words), truncated)


# --------------------------------------------------------------------------
# Word embeddings (input node features)
# --------------------------------------------------------------------------


def save_word_vectors(path: Path, table: np.ndarray) -> None:
    table = np.ascontiguousarray(table, dtype="<f4")
    rows, cols = table.shape
    with open(path, "wb") as f:
        f.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, rows, cols))
        f.write(table.tobytes())


def load_word_vectors(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _EMB_HEADER.size:
        raise CorpusError(f"{path}: truncated header")
    magic, version, rows, cols = _EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise CorpusError(f"{path}: bad magic {magic!r}")
    if version != EMB_VERSION:
        raise CorpusError(f"{path}: unsupported version {version}")
    body = raw[_EMB_HEADER.size :]
    if len(body) != rows * cols * 4:
        raise CorpusError(f"{path}: expected {rows}x{cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


def train_word_vectors(
    sequences: Sequence[np.ndarray],
    vocab_size: int,
    dim: int = 128,
    window: int = 2,
    negatives: int = 5,
    epochs: int = 3,
    lr: float = 0.01,
    batch_size: int = 1024,
    seed: int = 0,
) -> np.ndarray:
    """Skip-gram with negative sampling over token-id sequences.

    Returns the input-side embedding table, shape ``(vocab_size, dim)``.
    """
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    centers, contexts = [], []
    for seq in sequences:
        seq = np.asarray(seq)
        for off in range(1, window + 1):
            if len(seq) > off:
                centers += [seq[:-off], seq[off:]]
                contexts += [seq[off:], seq[:-off]]
    emb_in = torch.empty(vocab_size, dim).uniform_(-0.5 / dim, 0.5 / dim, generator=gen)
    if not centers:
        return emb_in.numpy()
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)

    freq = np.bincount(np.concatenate([np.asarray(s) for s in sequences]), minlength=vocab_size)
    noise = freq.astype(np.float64) ** 0.75
    noise /= noise.sum()

    emb_in.requires_grad_(True)
    emb_out = torch.zeros(vocab_size, dim, requires_grad=True)
    opt = torch.optim.Adam([emb_in, emb_out], lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(centers))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            c = torch.from_numpy(centers[idx])
            o = torch.from_numpy(contexts[idx])
            neg = torch.from_numpy(rng.choice(vocab_size, size=(len(idx), negatives), p=noise))
            vc = emb_in[c]
            pos = (vc * emb_out[o]).sum(-1)
            negs = torch.einsum("bd,bkd->bk", vc, emb_out[neg])
            loss = -(torch.nn.functional.logsigmoid(pos).mean()
                     + torch.nn.functional.logsigmoid(-negs).sum(-1).mean())
            opt.zero_grad()
            loss.backward()
            opt.step()
    return emb_in.detach().numpy().astype(np.float32)


def build_node_features(token_ids: np.ndarray, lengths: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Row i is the mean word vector of document i's non-PAD tokens."""
    n = len(lengths)
    feats = np.zeros((n, table.shape[1]), dtype=np.float32)
    for i in range(n):
        ids = token_ids[i, : lengths[i]]
        ids = ids[ids != PAD]
        if len(ids) == 0:
            log.warning("document %d has no tokens; using a zero feature vector", i)
            continue
        feats[i] = table[ids].mean(axis=0)
    return feats


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------


@dataclass
class RawCorpus:
    """The file-level content of a corpus directory."""

    texts: list[str]
    edges: list[tuple[int, int]]
    labels: dict[int, int] = field(default_factory=dict)
    class_texts: dict[int, str] = field(default_factory=dict)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "documents.tsv", "w", encoding="utf-8") as f:
            for i, text in enumerate(self.texts):
                f.write(f"{i}\t{_one_line(text)}\n")
        with open(d / "edges.tsv", "w", encoding="utf-8") as f:
            for u, v in self.edges:
                f.write(f"{u}\t{v}\n")
        if self.labels:
            with open(d / "labels.tsv", "w", encoding="utf-8") as f:
                for node in sorted(self.labels):
                    f.write(f"{node}\t{self.labels[node]}\n")
        if self.class_texts:
            with open(d / "classes.tsv", "w", encoding="utf-8") as f:
                for cid in sorted(self.class_texts):
                    f.write(f"{cid}\t{_one_line(self.class_texts[cid])}\n")

    @classmethod
    def read(cls, directory) -> "RawCorpus":
        d = Path(directory)
        for name in ("documents.tsv", "edges.tsv"):
            if not (d / name).is_file():
                raise CorpusError(f"missing required file {d / name}")

        node_of: dict[str, int] = {}
        texts: list[str] = []
        for lineno, cols in _read_tsv(d / "documents.tsv"):
            key, text = cols
            if key in node_of:
                raise CorpusError(f"{d / 'documents.tsv'}:{lineno}: duplicate node_id {key}")
            if not text.strip():
                raise CorpusError(f"{d / 'documents.tsv'}:{lineno}: empty document for node_id {key}")
            node_of[key] = len(texts)
            texts.append(text)

        def node(path, lineno, key):
            if key not in node_of:
                raise CorpusError(f"{path}:{lineno}: unknown node_id {key}")
            return node_of[key]

        edges: set[tuple[int, int]] = set()
        path = d / "edges.tsv"
        for lineno, (a, b) in _read_tsv(path):
            u, v = node(path, lineno, a), node(path, lineno, b)
            if u == v:
                log.warning("%s:%d: dropping self-loop on node %s", path, lineno, a)
                continue
            edges.add((min(u, v), max(u, v)))

        class_texts: dict[int, str] = {}
        path = d / "classes.tsv"
        if path.is_file():
            for lineno, (cid, text) in _read_tsv(path):
                cid = _int(path, lineno, cid)
                if cid in class_texts:
                    raise CorpusError(f"{path}:{lineno}: duplicate class_id {cid}")
                class_texts[cid] = text

        labels: dict[int, int] = {}
        path = d / "labels.tsv"
        if path.is_file():
            for lineno, (key, cid) in _read_tsv(path):
                n = node(path, lineno, key)
                cid = _int(path, lineno, cid)
                if class_texts and cid not in class_texts:
                    raise CorpusError(f"{path}:{lineno}: class_id {cid} not in classes.tsv")
                if n in labels:
                    raise CorpusError(f"{path}:{lineno}: node_id {key} labelled twice")
                labels[n] = cid

        return cls(texts, sorted(edges), labels, class_texts)


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _int(path, lineno, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise CorpusError(f"{path}:{lineno}: expected an integer, got {value!r}") from None


def _read_tsv(path: Path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t", 1)
            if len(cols) != 2:
                raise CorpusError(f"{path}:{lineno}: expected two tab-separated columns")
            yield lineno, cols


@dataclass(eq=False)
class GraphTextCorpus:
    """Tokenized documents, graph structure and input node features.

    Treated as immutable once built.
    """

    texts: list[str]
    vocab: Vocabulary
    max_len: int
    token_ids: np.ndarray  # (n, max_len) int64
    lengths: np.ndarray  # (n,)
    truncated: np.ndarray  # (n,) bool
    edges: np.ndarray  # (E, 2), u < v
    adjacency: list[np.ndarray]
    labels: dict[int, int]
    class_texts: dict[int, str]
    word_vectors: np.ndarray  # (|vocab|, f)
    node_features: np.ndarray  # (n, f)

    @property
    def num_nodes(self) -> int:
        return len(self.texts)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def documents(self) -> list[tuple[int, np.ndarray]]:
        return [(i, self.token_ids[i, : self.lengths[i]]) for i in range(self.num_nodes)]

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency])

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.class_texts) if self.class_texts else sorted(set(self.labels.values()))

    def nodes_of_class(self, class_id: int) -> list[int]:
        return sorted(n for n, c in self.labels.items() if c == class_id)

    def to_raw(self) -> RawCorpus:
        return RawCorpus(list(self.texts), [tuple(map(int, e)) for e in self.edges],
                         dict(self.labels), dict(self.class_texts))

    @classmethod
    def from_raw(
        cls,
        raw: RawCorpus,
        *,
        max_len: int = 128,
        min_freq: int = 2,
        vocab: Vocabulary | None = None,
        word_vectors: np.ndarray | None = None,
        embedding_dim: int = 128,
        seed: int = 0,
    ) -> "GraphTextCorpus":
        n = len(raw.texts)
        for u, v in raw.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise CorpusError(f"edge ({u}, {v}) references a node outside 0..{n - 1}")
            if u == v:
                raise CorpusError(f"self-loop on node {u}")
        if vocab is None:
            vocab = Vocabulary.build(raw.texts, min_freq=min_freq, always=raw.class_texts.values())

        toks = [tokenize(t, vocab, max_len) for t in raw.texts]
        token_ids = np.stack([t.ids for t in toks]) if toks else np.zeros((0, max_len), np.int64)
        lengths = np.array([t.length for t in toks], dtype=np.int64)
        truncated = np.array([t.truncated for t in toks], dtype=bool)
        if truncated.any():
            log.info("%d document(s) truncated to %d tokens", int(truncated.sum()), max_len)

        edges = np.array(sorted({(min(u, v), max(u, v)) for u, v in raw.edges}), dtype=np.int64).reshape(-1, 2)
        neigh: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            neigh[u].append(int(v))
            neigh[v].append(int(u))
        adjacency = [np.array(sorted(a), dtype=np.int64) for a in neigh]

        if word_vectors is None:
            word_vectors = train_word_vectors(
                [token_ids[i, : lengths[i]] for i in range(n)], len(vocab), dim=embedding_dim, seed=seed
            )
        if word_vectors.shape[0] != len(vocab):
            raise CorpusError(
                f"word vector table has {word_vectors.shape[0]} rows but vocabulary has {len(vocab)} entries"
            )
        features = build_node_features(token_ids, lengths, word_vectors)
        return cls(list(raw.texts), vocab, max_len, token_ids, lengths, truncated, edges, adjacency,
                   dict(raw.labels), dict(raw.class_texts), word_vectors.astype(np.float32), features)

    def save(self, directory, *, with_embeddings: bool = True) -> None:
        self.to_raw().save(directory)
        if with_embeddings:
            self.vocab.save(Path(directory) / "vocab.tsv")
            save_word_vectors(Path(directory) / "embeddings.f32", self.word_vectors)

    def class_tokens(self, class_id: int) -> np.ndarray:
        """Unpadded token ids of a class label text."""
        t = tokenize(self.class_texts[class_id], self.vocab, self.max_len)
        return t.ids[: t.length]


def load_corpus(
    directory,
    *,
    max_len: int = 128,
    min_freq: int = 2,
    vocab: Vocabulary | None = None,
    word_vectors: np.ndarray | None = None,
    embedding_dim: int = 128,
    seed: int = 0,
) -> GraphTextCorpus:
    """Read and validate a corpus directory.

    A ``vocab.tsv``/``embeddings.f32`` pair in the directory is used unless
    ``vocab``/``word_vectors`` are passed explicitly; otherwise the vocabulary
    is built from the documents and word vectors are trained on them.
    """
    d = Path(directory)
    raw = RawCorpus.read(d)
    if vocab is None and (d / "vocab.tsv").is_file():
        vocab = Vocabulary.load(d / "vocab.tsv")
        if word_vectors is None and (d / "embeddings.f32").is_file():
            word_vectors = load_word_vectors(d / "embeddings.f32")
    return GraphTextCorpus.from_raw(raw, max_len=max_len, min_freq=min_freq, vocab=vocab,
                                    word_vectors=word_vectors, embedding_dim=embedding_dim, seed=seed)


def sample_neighbors(corpus: GraphTextCorpus, node_id: int, eta: int, rng: np.random.Generator) -> list[int]:
    """Up to ``eta`` distinct neighbors of ``node_id``, uniformly without replacement."""
    neigh = corpus.adjacency[node_id]
    if len(neigh) <= eta:
        return neigh.tolist()
    return rng.choice(neigh, size=eta, replace=False).tolist()
