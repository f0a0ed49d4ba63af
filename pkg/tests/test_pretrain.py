import math

import numpy as np
import pytest
import torch
from conftest import make_corpus, random_corpus

from graphtext.corpus import GraphTextCorpus
from graphtext.graph_encoder import GraphEncoderConfig
from graphtext.numeric import NumericError
from graphtext.pretrain import BatchRecord, DualEncoder, PretrainConfig, TrainLog, measure_epoch_scaling, pretrain
from graphtext.tasks import SynthConfig, generate_synthetic_corpus
from graphtext.text_encoder import TextEncoderConfig


def tiny_configs(corpus, d=8):
    return (TextEncoderConfig(layers=1, width=16, heads=2, max_len=corpus.max_len, vocab_size=len(corpus.vocab),
                              output_dim=d),
            GraphEncoderConfig(corpus.feature_dim, 8, d))


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(eta=0), dict(lr=0.0), dict(lam=0.0),
                                dict(loss_terms="L5")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PretrainConfig(**kw).validate()


def test_dual_encoder_dimension_mismatch():
    with pytest.raises(ValueError, match="output_dim"):
        DualEncoder(TextEncoderConfig(vocab_size=4, output_dim=8), GraphEncoderConfig(4, 4, 6))


def test_smoke_identical_isolated_documents():
    c = make_corpus(["alpha beta gamma"] * 5, [])
    model, trainlog = pretrain(c, *tiny_configs(c), PretrainConfig(epochs=1, batch_size=5))
    assert len(trainlog.records) == 1
    rec = trainlog.records[0]
    assert all(math.isfinite(v) for v in (rec.l1, rec.l2, rec.l3, rec.total))
    # identical texts: every text embedding is the same, so L2 sits at ln n
    assert rec.l2 == pytest.approx(math.log(5), abs=1e-4)
    assert not model.training


def test_training_log_structure(tmp_path):
    c = random_corpus(13, 0.3, seed=1)
    _, trainlog = pretrain(c, *tiny_configs(c), PretrainConfig(epochs=2, batch_size=5, lam=0.5))
    assert [r.batch for r in trainlog.records] == list(range(6))
    assert [r.epoch for r in trainlog.records] == [0, 0, 0, 1, 1, 1]
    for r in trainlog.records:
        assert r.total == pytest.approx(r.l1 + 0.5 * (r.l2 + r.l3), rel=1e-5)
        assert 0 < r.exp_tau <= 100
    assert len(trainlog.epoch_seconds) == 2 and set(trainlog.epoch_means()) == {0, 1}
    path = tmp_path / "train.log"
    trainlog.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# epoch batch L1 L2 L3 total expTau seconds"
    assert len(lines) == 7 and len(lines[1].split()) == 8


def test_log_rejects_non_monotone_batches():
    log = TrainLog()
    log.append(BatchRecord(0, 3, 1, 1, 1, 1, 1, 0))
    with pytest.raises(ValueError):
        log.append(BatchRecord(0, 3, 1, 1, 1, 1, 1, 0))


def test_same_seed_reproduces_bitwise():
    c = random_corpus(20, 0.2, seed=2)
    cfg = dict(epochs=2, batch_size=8, lr=1e-3)
    m1, log1 = pretrain(c, *tiny_configs(c), PretrainConfig(seed=5, **cfg))
    m2, log2 = pretrain(c, *tiny_configs(c), PretrainConfig(seed=5, **cfg))
    assert [r.total for r in log1.records] == [r.total for r in log2.records]
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p, q)
    _, log3 = pretrain(c, *tiny_configs(c), PretrainConfig(seed=6, **cfg))
    assert [r.total for r in log3.records] != [r.total for r in log1.records]


def test_only_encoders_and_temperature_update():
    c = random_corpus(16, 0.3, seed=3)
    features = c.node_features.copy()
    vectors = c.word_vectors.copy()
    tcfg, gcfg = tiny_configs(c)
    before = DualEncoder(tcfg, gcfg, seed=0).state_dict()
    model, _ = pretrain(c, tcfg, gcfg, PretrainConfig(epochs=1, batch_size=8, lr=1e-2))
    assert np.array_equal(c.node_features, features) and np.array_equal(c.word_vectors, vectors)
    names = {n for n, _ in model.named_parameters()}
    assert "tau" in names and any(n.startswith("text.") for n in names) and any(n.startswith("graph.") for n in names)
    changed = [n for n, p in model.named_parameters() if not torch.equal(p, before[n])]
    assert "tau" in changed and "graph.w1" in changed and "text.projection" in changed


def test_loss_mask_runs_each_arm():
    c = random_corpus(12, 0.3, seed=4)
    for mask in ("L1", "L2", "L2,L3", "L1,L2,L3"):
        _, trainlog = pretrain(c, *tiny_configs(c), PretrainConfig(epochs=1, batch_size=6, loss_terms=mask))
        assert all(math.isfinite(r.total) for r in trainlog.records)
    r = trainlog.records[0]
    _, only_l1 = pretrain(c, *tiny_configs(c), PretrainConfig(epochs=1, batch_size=6, loss_terms="L1"))
    assert only_l1.records[0].total == pytest.approx(only_l1.records[0].l1)
    assert r.total == pytest.approx(r.l1 + 0.1 * (r.l2 + r.l3), rel=1e-5)


def test_non_finite_loss_aborts_with_diagnostics():
    c = random_corpus(8, 0.3, seed=5)
    tcfg, gcfg = tiny_configs(c)
    model = DualEncoder(tcfg, gcfg)
    with torch.no_grad():
        model.graph.w2.fill_(float("nan"))
    with pytest.raises(NumericError, match=r"tau=.*batch ids="):
        pretrain(c, tcfg, gcfg, PretrainConfig(epochs=1, batch_size=8), model=model)


def test_checkpoint_written_when_configured(tmp_path):
    from graphtext.checkpoint import load_checkpoint

    c = random_corpus(8, 0.3, seed=6)
    path = tmp_path / "m.ckpt"
    model, _ = pretrain(c, *tiny_configs(c), PretrainConfig(epochs=1, batch_size=4, checkpoint=str(path)))
    loaded = load_checkpoint(path)
    for (n, p), (m, q) in zip(model.state_dict().items(), loaded.model.state_dict().items()):
        assert n == m and torch.equal(p, q)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_training_reduces_loss_on_synthetic_corpus(seed):
    raw = generate_synthetic_corpus(SynthConfig(classes=5, docs_per_class=60), seed=seed)
    c = GraphTextCorpus.from_raw(raw, seed=seed, embedding_dim=32)
    tcfg = TextEncoderConfig(vocab_size=len(c.vocab))
    gcfg = GraphEncoderConfig(c.feature_dim, 128, tcfg.output_dim)
    _, trainlog = pretrain(c, tcfg, gcfg, PretrainConfig(epochs=3, seed=seed))
    means = trainlog.epoch_means()
    assert means[2]["total"] < means[0]["total"]


def test_epoch_scaling_single_size_gives_single_row():
    tcfg = TextEncoderConfig(layers=1, width=16, heads=2, max_len=16, output_dim=8)
    rows = measure_epoch_scaling([40], tcfg, GraphEncoderConfig(16, 8, 8), PretrainConfig(batch_size=16),
                                 synth_options=dict(docs_per_class=10, min_doc_len=5, max_doc_len=10), epochs=1)
    assert len(rows) == 1 and rows[0][0] == 40 and rows[0][1] > 0


@pytest.mark.slow
def test_epoch_time_grows_with_eta():
    raw = generate_synthetic_corpus(SynthConfig(classes=5, docs_per_class=80, p_in=0.2), seed=0)
    c = GraphTextCorpus.from_raw(raw, embedding_dim=16)
    tcfg = TextEncoderConfig(vocab_size=len(c.vocab))
    gcfg = GraphEncoderConfig(16, 32, tcfg.output_dim)
    times = {}
    for eta in (3, 6):
        _, trainlog = pretrain(c, tcfg, gcfg, PretrainConfig(epochs=3, eta=eta, batch_size=32))
        times[eta] = min(trainlog.epoch_seconds)
    assert times[6] > times[3]
