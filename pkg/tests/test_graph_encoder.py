import numpy as np
import pytest
import torch
import torch.nn.functional as F
from conftest import make_corpus
from gradcheck import REL_TOL, check_gradients, random_graph

from graphtext.graph_encoder import (
    LEAKY_SLOPE,
    GraphEncoder,
    GraphEncoderConfig,
    build_normalized_adjacency,
    encode_nodes,
    pool_summaries,
    summary_embedding,
    summary_sets,
)
from graphtext.numeric import ShapeError


def dense_normalized(edges, n):
    a = np.eye(n)
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    d = np.diag(1.0 / np.sqrt(a.sum(1)))
    return d @ a @ d


def dense_forward(a_hat, x, w1, w2):
    h = a_hat @ x @ w1
    h = np.where(h > 0, h, LEAKY_SLOPE * h)
    return a_hat @ h @ w2


def test_isolated_node_has_unit_self_loop():
    adj = build_normalized_adjacency(np.zeros((0, 2)), 3).to_dense()
    assert torch.equal(adj, torch.eye(3))


def test_connected_pair_all_half():
    adj = build_normalized_adjacency([(0, 1)], 2).to_dense()
    assert torch.allclose(adj, torch.full((2, 2), 0.5))


def test_random_graph_matches_dense_oracle():
    rng = np.random.default_rng(0)
    edges = random_graph(20, 0.2, rng)
    adj = build_normalized_adjacency(edges, 20)
    np.testing.assert_allclose(adj.to_dense().numpy(), dense_normalized(edges, 20), atol=1e-6)
    assert torch.equal(adj.to_dense(), adj.to_dense().T)
    idx = adj.indices().numpy()
    for i in range(20):
        nz = set(idx[1, idx[0] == i].tolist())
        neigh = {int(v) for u, v in edges if u == i} | {int(u) for u, v in edges if v == i}
        assert nz == {i} | neigh


def test_adjacency_from_corpus():
    c = make_corpus(["alpha"] * 3, [(0, 1), (1, 2)])
    np.testing.assert_allclose(build_normalized_adjacency(c).to_dense().numpy(),
                               dense_normalized([(0, 1), (1, 2)], 3), atol=1e-7)


def test_forward_matches_dense_oracle():
    rng = np.random.default_rng(1)
    edges = random_graph(15, 0.25, rng)
    enc = GraphEncoder(GraphEncoderConfig(6, 10, 4), seed=2)
    x = rng.normal(size=(15, 6)).astype(np.float32)
    z = encode_nodes(enc, build_normalized_adjacency(edges, 15), x)
    expected = dense_forward(dense_normalized(edges, 15), x, enc.w1.detach().numpy().astype(np.float64),
                             enc.w2.detach().numpy().astype(np.float64))
    np.testing.assert_allclose(z.detach().numpy(), expected, atol=1e-5)


def test_isolated_nodes_reduce_to_mlp():
    enc = GraphEncoder(GraphEncoderConfig(5, 7, 3), seed=0)
    x = torch.randn(4, 5, generator=torch.Generator().manual_seed(0))
    z = enc(build_normalized_adjacency(np.zeros((0, 2)), 4), x)
    mlp = F.leaky_relu(x @ enc.w1, LEAKY_SLOPE) @ enc.w2
    assert torch.allclose(z, mlp, atol=1e-6)


def test_symmetric_positions_get_identical_embeddings():
    # star: centre 0 with leaves 1, 2 carrying the same features
    enc = GraphEncoder(GraphEncoderConfig(3, 4, 2), seed=1)
    x = torch.tensor([[1.0, 0.0, 2.0], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
    z = enc(build_normalized_adjacency([(0, 1), (0, 2)], 3), x)
    assert torch.allclose(z[1], z[2])


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    n = 12
    edges = random_graph(n, 0.3, rng)
    perm = rng.permutation(n)
    inv = np.argsort(perm)  # new id of old node i is inv[i]
    enc = GraphEncoder(GraphEncoderConfig(4, 6, 3), seed=4)
    x = torch.randn(n, 4, generator=torch.Generator().manual_seed(5))
    z = enc(build_normalized_adjacency(edges, n), x)
    pz = enc(build_normalized_adjacency(inv[edges], n), x[perm])
    assert torch.allclose(pz, z[perm], atol=1e-6)


def test_two_hop_locality():
    # path 0-1-2-3-4: node 0 must not see node 3
    edges = [(0, 1), (1, 2), (2, 3), (3, 4)]
    enc = GraphEncoder(GraphEncoderConfig(3, 5, 2), seed=6)
    adj = build_normalized_adjacency(edges, 5)
    x = torch.randn(5, 3, generator=torch.Generator().manual_seed(7))
    y = x.clone()
    y[3] += 10.0
    z, zy = enc(adj, x), enc(adj, y)
    assert torch.equal(z[0], zy[0])
    assert not torch.allclose(z[1], zy[1])


def test_shape_mismatch():
    enc = GraphEncoder(GraphEncoderConfig(3, 4, 2))
    with pytest.raises(ShapeError):
        enc(build_normalized_adjacency([(0, 1)], 2), torch.zeros(2, 4))
    with pytest.raises(ShapeError):
        enc(build_normalized_adjacency([(0, 1)], 2), torch.zeros(3, 3))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    edges = random_graph(8, 0.4, rng)
    enc = GraphEncoder(GraphEncoderConfig(3, 5, 4), seed=9).double()
    adj = build_normalized_adjacency(edges, 8).double()
    x = torch.randn(8, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(10), requires_grad=True)
    w = torch.randn(8, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(11))
    pre = (adj.to_dense() @ x @ enc.w1).detach()
    assert pre.abs().min() > 1e-3  # no coordinate sits on the LeakyReLU kink

    errs = check_gradients(lambda: (enc(adj, x) * w).sum(), {"x": x, **dict(enc.named_parameters())})
    assert max(errs.values()) < REL_TOL, errs


def test_summary_singleton_pair_and_isolated_fallback():
    c = make_corpus(["alpha"] * 5, [(0, 1), (2, 3), (2, 4)])
    t = torch.randn(5, 3, generator=torch.Generator().manual_seed(0))
    rng = np.random.default_rng(0)
    assert torch.equal(summary_embedding(t, c, 0, 3, rng), t[1])
    assert torch.allclose(summary_embedding(t, c, 2, 3, rng), (t[3] + t[4]) / 2)
    iso = make_corpus(["alpha"] * 2, [])
    assert torch.equal(summary_embedding(t[:2], iso, 1, 3, rng), t[1])


def test_summary_eta3_on_degree8_matches_loop_oracle():
    c = make_corpus(["alpha"] * 9, [(0, k) for k in range(1, 9)])
    t = torch.randn(9, 4, generator=torch.Generator().manual_seed(1))
    rng_a, rng_b = np.random.default_rng(42), np.random.default_rng(42)
    s = summary_embedding(t, c, 0, 3, rng_a)
    picked = rng_b.choice(c.adjacency[0], size=3, replace=False)
    assert len(set(picked.tolist())) == 3
    acc = torch.zeros(4)
    for j in picked:
        acc += t[j]
    assert torch.allclose(s, acc / 3, atol=1e-6)


def test_summary_full_neighborhood_is_deterministic():
    c = make_corpus(["alpha"] * 4, [(0, 1), (0, 2), (0, 3)])
    t = torch.randn(4, 2, generator=torch.Generator().manual_seed(2))
    a = summary_embedding(t, c, 0, 3, np.random.default_rng(0))
    b = summary_embedding(t, c, 0, 5, np.random.default_rng(99))
    assert torch.allclose(a, t[1:].mean(0)) and torch.allclose(a, b)


def test_pool_summaries_with_row_map():
    t = torch.arange(6, dtype=torch.float32).reshape(3, 2)
    out = pool_summaries(t, [[10, 30], [20]], row_of={10: 0, 20: 1, 30: 2})
    assert out.tolist() == [[2.0, 3.0], [2.0, 3.0]]
    c = make_corpus(["alpha"] * 3, [(0, 1)])
    assert summary_sets(c, [0, 2], 3, np.random.default_rng(0)) == [[1], [2]]
