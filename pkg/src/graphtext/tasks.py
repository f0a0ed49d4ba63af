"""N-way K-shot tasks, accuracy / macro-F1 reports and a synthetic
graph-grounded corpus generator (stochastic block model + class vocabularies)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import GraphTextCorpus, RawCorpus

Z_95 = 1.96


class TaskError(ValueError):
    pass


@dataclass
class FewShotTask:
    class_ids: list[int]
    support: dict[int, list[int]]
    validation: dict[int, list[int]]
    query: list[int]
    query_labels: list[int]  # task-local class indices
    query_capped: bool = False

    @property
    def ways(self) -> int:
        return len(self.class_ids)

    @property
    def shots(self) -> int:
        return len(next(iter(self.support.values()))) if self.support else 0

    def _pairs(self, split: dict[int, list[int]]):
        ids, ys = [], []
        for local, c in enumerate(self.class_ids):
            for node in split.get(c, []):
                ids.append(node)
                ys.append(local)
        return ids, ys

    def support_pairs(self):
        return self._pairs(self.support)

    def validation_pairs(self):
        return self._pairs(self.validation)


def sample_task(corpus: GraphTextCorpus, ways: int = 5, shots: int = 0, rng: np.random.Generator | None = None,
                query_cap: int | None = 200) -> FewShotTask:
    """Sample ``ways`` classes, then ``shots`` support and ``shots`` validation
    nodes per class; every other labelled node of those classes is a query."""
    rng = rng if rng is not None else np.random.default_rng()
    if shots < 0:
        raise TaskError(f"shots must be >= 0, got {shots}")
    members: dict[int, list[int]] = {}
    for node, c in sorted(corpus.labels.items()):
        members.setdefault(c, []).append(node)
    classes = sorted(members)
    if len(classes) < ways:
        raise TaskError(f"{ways}-way task needs {ways} labelled classes, corpus has {len(classes)}")

    chosen = [int(c) for c in rng.choice(classes, size=ways, replace=False)]
    support, validation = {}, {}
    query, query_labels = [], []
    capped = False
    for local, c in enumerate(chosen):
        nodes = np.array(members[c])
        if len(nodes) < 2 * shots + 1:
            raise TaskError(f"class {c} has {len(nodes)} labelled nodes; {shots}-shot needs {2 * shots + 1}")
        perm = rng.permutation(nodes)
        support[c] = perm[:shots].tolist() if shots else []
        validation[c] = perm[shots : 2 * shots].tolist() if shots else []
        rest = perm[2 * shots :]
        if query_cap is not None and len(rest) > query_cap:
            rest = rest[:query_cap]
            capped = True
        rest = sorted(rest.tolist())
        query += rest
        query_labels += [local] * len(rest)
    if not shots:
        support, validation = {}, {}
    return FewShotTask(chosen, support, validation, query, query_labels, capped)


def evaluate(predictions, truth, ways: int) -> tuple[float, float]:
    """Accuracy and macro-F1 over classes ``0..ways-1``.

    A class with no true and no predicted examples contributes F1 = 0.
    """
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    if len(true) == 0:
        raise ValueError("cannot evaluate an empty query set")
    acc = float((pred == true).mean())
    f1s = []
    for c in range(ways):
        tp = int(((pred == c) & (true == c)).sum())
        fp = int(((pred == c) & (true != c)).sum())
        fn = int(((pred != c) & (true == c)).sum())
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return acc, float(np.mean(f1s))


def mean_and_halfwidth(values) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width (1.96 standard errors)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return math.nan, math.nan
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(Z_95 * v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class EvalReport:
    name: str
    accuracy: list[float] = field(default_factory=list)
    macro_f1: list[float] = field(default_factory=list)
    query_capped: bool = False

    def add(self, acc: float, f1: float, capped: bool = False) -> None:
        self.accuracy.append(acc)
        self.macro_f1.append(f1)
        self.query_capped |= capped

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.name, self.accuracy + other.accuracy, self.macro_f1 + other.macro_f1,
                          self.query_capped or other.query_capped)

    @property
    def tasks(self) -> int:
        return len(self.accuracy)

    @property
    def mean_accuracy(self) -> float:
        return mean_and_halfwidth(self.accuracy)[0]

    @property
    def mean_macro_f1(self) -> float:
        return mean_and_halfwidth(self.macro_f1)[0]

    def summary(self) -> dict:
        acc, acc_hw = mean_and_halfwidth(self.accuracy)
        f1, f1_hw = mean_and_halfwidth(self.macro_f1)
        return {"name": self.name, "tasks": self.tasks, "accuracy": acc, "accuracy_ci95": acc_hw,
                "macro_f1": f1, "macro_f1_ci95": f1_hw, "query_capped": self.query_capped}

    def to_table(self) -> str:
        s = self.summary()
        header = f"{'run':<24} {'tasks':>5} {'accuracy (%)':>16} {'macro-F1 (%)':>16}"
        row = (f"{s['name']:<24} {s['tasks']:>5} "
               f"{100 * s['accuracy']:>8.2f} ± {100 * s['accuracy_ci95']:<5.2f} "
               f"{100 * s['macro_f1']:>8.2f} ± {100 * s['macro_f1_ci95']:<5.2f}")
        lines = [header, row]
        if self.query_capped:
            lines.append("note: query sets were capped per class")
        return "\n".join(lines)

    def to_records(self) -> list[str]:
        recs = [json.dumps({"name": self.name, "task": i, "accuracy": a, "macro_f1": f})
                for i, (a, f) in enumerate(zip(self.accuracy, self.macro_f1))]
        recs.append(json.dumps({**self.summary(), "record": "summary"}))
        return recs


# --------------------------------------------------------------------------
# Synthetic corpus
# --------------------------------------------------------------------------


@dataclass
class SynthConfig:
    classes: int = 10
    docs_per_class: int = 100
    class_vocab: int = 30
    shared_vocab: int = 200
    p_in: float = 0.05
    p_out: float = 0.001
    noise: float = 0.3
    min_doc_len: int = 20
    max_doc_len: int = 40
    label_words: int = 2
    zipf_exponent: float = 1.0

    def validate(self) -> None:
        for name in ("p_in", "p_out", "noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.p_in > self.p_out:
            raise ValueError(f"p_in ({self.p_in}) must exceed p_out ({self.p_out})")
        if self.classes < 1 or self.docs_per_class < 1:
            raise ValueError("classes and docs_per_class must be positive")
        if self.class_vocab < 1 or self.shared_vocab < 1:
            raise ValueError("vocabulary sizes must be positive")
        if not 1 <= self.min_doc_len <= self.max_doc_len:
            raise ValueError("need 1 <= min_doc_len <= max_doc_len")
        if not 1 <= self.label_words <= self.class_vocab:
            raise ValueError("label_words must lie in [1, class_vocab]")


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(count: int, rng: np.random.Generator, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        syll = rng.integers(2, 4)
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syll))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf(k: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** exponent
    return w / w.sum()


def generate_synthetic_corpus(config: SynthConfig | None = None, seed: int = 0,
                              rng: np.random.Generator | None = None) -> RawCorpus:
    """Documents drawn from per-class Zipfian vocabularies (plus a shared pool
    at rate ``noise``) on a stochastic-block-model graph.

    Each class label text is the class's most frequent words.
    """
    config = config or SynthConfig()
    config.validate()
    rng = rng if rng is not None else np.random.default_rng(seed)
    taken: set[str] = set()
    class_words = [_pseudo_words(config.class_vocab, rng, taken) for _ in range(config.classes)]
    shared = _pseudo_words(config.shared_vocab, rng, taken)
    p_class, p_shared = _zipf(config.class_vocab, config.zipf_exponent), _zipf(config.shared_vocab, config.zipf_exponent)

    n = config.classes * config.docs_per_class
    labels = rng.permutation(np.repeat(np.arange(config.classes), config.docs_per_class))
    texts = []
    for c in labels:
        length = int(rng.integers(config.min_doc_len, config.max_doc_len + 1))
        from_shared = rng.random(length) < config.noise
        own = rng.choice(config.class_vocab, size=length, p=p_class)
        pool = rng.choice(config.shared_vocab, size=length, p=p_shared)
        texts.append(" ".join(shared[p] if s else class_words[c][o] for s, o, p in zip(from_shared, own, pool)))

    edges = []
    for i in range(n - 1):
        others = np.arange(i + 1, n)
        prob = np.where(labels[others] == labels[i], config.p_in, config.p_out)
        hit = others[rng.random(len(others)) < prob]
        edges += [(i, int(j)) for j in hit]

    class_texts = {c: " ".join(class_words[c][: config.label_words]) for c in range(config.classes)}
    return RawCorpus(texts, edges, {i: int(c) for i, c in enumerate(labels)}, class_texts)
