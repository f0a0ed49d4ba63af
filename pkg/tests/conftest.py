import numpy as np
import pytest
import torch

from graphtext.corpus import GraphTextCorpus, RawCorpus, Vocabulary

WORDS = "alpha beta gamma delta epsilon zeta eta theta iota kappa".split()


def make_corpus(texts, edges, labels=None, class_texts=None, *, dim=4, max_len=8, seed=0, words=WORDS):
    """Corpus over a fixed vocabulary with random word vectors (no skip-gram pass)."""
    vocab = Vocabulary(words)
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(len(vocab), dim)).astype(np.float32)
    raw = RawCorpus(list(texts), [tuple(e) for e in edges], dict(labels or {}), dict(class_texts or {}))
    return GraphTextCorpus.from_raw(raw, max_len=max_len, vocab=vocab, word_vectors=vectors)


def random_corpus(n, p, seed, *, dim=4, max_len=8, min_words=1, max_words=6):
    rng = np.random.default_rng(seed)
    texts = [" ".join(rng.choice(WORDS, rng.integers(min_words, max_words + 1))) for _ in range(n)]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return make_corpus(texts, edges, dim=dim, max_len=max_len, seed=seed)


@pytest.fixture
def three_doc_dir(tmp_path):
    d = tmp_path / "three"
    d.mkdir()
    (d / "documents.tsv").write_text("0\tGraph neural nets\n1\tText encoders, graph encoders!\n2\tPrompt tuning\n")
    (d / "edges.tsv").write_text("0\t1\n1\t2\n")
    (d / "labels.tsv").write_text("0\t0\n1\t0\n2\t1\n")
    (d / "classes.tsv").write_text("0\tgraph\n1\tprompt\n")
    return d


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


# --------------------------------------------------------------------------
# shared synthetic corpus and pre-trained models (expensive; session scope)
# --------------------------------------------------------------------------

# pre-training recipe used for the end-to-end checks: desk-scale encoders,
# learning rate 2e-5, batch 64, eta 3, lambda 0.1, two epochs
E2E_EPOCHS = 2
E2E_SEEDS = (1, 2, 4)


@pytest.fixture(scope="session")
def synthetic_corpus():
    from graphtext.corpus import GraphTextCorpus
    from graphtext.tasks import SynthConfig, generate_synthetic_corpus

    torch.set_num_threads(1)
    return GraphTextCorpus.from_raw(generate_synthetic_corpus(SynthConfig(), seed=0), seed=0)


@pytest.fixture(scope="session")
def pretrained(synthetic_corpus):
    """``pretrained(seed, loss_terms=...)`` -> (model, trainlog), cached per session."""
    from graphtext.graph_encoder import GraphEncoderConfig
    from graphtext.pretrain import PretrainConfig, pretrain
    from graphtext.text_encoder import TextEncoderConfig

    cache = {}

    def get(seed, loss_terms=("L1", "L2", "L3")):
        key = (seed, tuple(loss_terms))
        if key not in cache:
            torch.set_num_threads(1)
            c = synthetic_corpus
            tcfg = TextEncoderConfig(vocab_size=len(c.vocab), max_len=c.max_len)
            gcfg = GraphEncoderConfig(c.feature_dim, 128, tcfg.output_dim)
            cfg = PretrainConfig(epochs=E2E_EPOCHS, seed=seed, loss_terms=tuple(loss_terms))
            cache[key] = pretrain(c, tcfg, gcfg, cfg)
        return cache[key]

    return get


# --------------------------------------------------------------------------
# acceptance report: one pass/fail line per criterion in the terminal summary
# --------------------------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.kwargs.get("criterion", item.name)
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0]) if s.split()[0].isdigit() else 99):
        status, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"[{status}] {label}" + (f" -- {detail}" if detail else ""))
