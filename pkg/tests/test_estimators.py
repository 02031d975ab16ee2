import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmpgnn.csbm import CSBMParams, generate
from cmpgnn.estimators import (HomophilyConfig, TrainingError, edge_error_oracle,
                               estimate_edge_error, even_hop_features, homophily_backward,
                               estimate_local_homophily, homophily_logits,
                               init_homophily_net, neighbor_agreement,
                               self_product_homophily, train_homophily_net)
from cmpgnn.graph import GraphBundle, local_homophily, normalize
from cmpgnn.linalg import nll_loss_and_grad, row_log_softmax



def test_edge_error_closed_form_values():
    assert estimate_edge_error(1.0, 5) == 0.0
    assert estimate_edge_error(0.0, 2) == 0.0  # all wrong on two classes: relations preserved
    assert estimate_edge_error(0.5, 2) == pytest.approx(0.5)
    assert estimate_edge_error(0.0, 3) == pytest.approx(0.5)
    assert estimate_edge_error(0.9, 7) == pytest.approx(1 - (0.81 + 0.01 / 6))
    with pytest.raises(ValueError):
        estimate_edge_error(0.5, 1)
    with pytest.raises(ValueError):
        estimate_edge_error(1.2, 3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(2, 10))
def test_edge_error_in_unit_interval(alpha, c):
    assert 0.0 <= estimate_edge_error(alpha, c) <= 1.0


@pytest.mark.parametrize("c,alpha", [(2, 0.3), (3, 0.7), (7, 0.9)])
def test_closed_form_matches_oracle_on_same_label_pairs(c, alpha):
    assert abs(estimate_edge_error(alpha, c) - edge_error_oracle(c, alpha, 200_000)) < 0.005


def test_oracle_two_classes_ignores_homophily():
    for h in (0.0, 0.5):
        assert abs(edge_error_oracle(2, 0.8, 200_000, homophily=h) - estimate_edge_error(0.8, 2)) < 0.005
    with pytest.raises(ValueError):
        edge_error_oracle(3, 0.5, trials=100)


def test_neighbor_agreement_with_one_hot_truth(small_graph):
    onehot = np.eye(small_graph.num_classes)[small_graph.y]
    np.testing.assert_allclose(neighbor_agreement(small_graph, onehot), local_homophily(small_graph))
    np.testing.assert_allclose(self_product_homophily(onehot), 1.0)
    uniform = np.full((small_graph.n, 3), 1 / 3)
    np.testing.assert_allclose(self_product_homophily(uniform), 1 / 3)


def test_even_hop_features(path4):
    norm = normalize(path4)
    f = even_hop_features(norm, path4.x, 4)
    a = norm.matrix.to_dense()
    assert len(f) == 3
    np.testing.assert_allclose(f[1], a @ a @ path4.x)
    np.testing.assert_allclose(f[2], np.linalg.matrix_power(a, 4) @ path4.x)


@pytest.mark.parametrize("branches", ["both", "even", "mlp"])
def test_homophily_net_gradient(branches, small_graph):
    cfg = HomophilyConfig(depth=2, hidden=4, branches=branches, seed=2)
    norm = normalize(small_graph)
    hops = even_hop_features(norm, small_graph.x, cfg.depth)
    net = init_homophily_net(small_graph.x.shape[1], 3, cfg)
    idx = small_graph.index("train")

    def loss_of():
        logits, cache = homophily_logits(net, small_graph.x, hops)
        loss, d = nll_loss_and_grad(row_log_softmax(logits), small_graph.y, idx)
        return loss, cache, d

    loss, cache, d = loss_of()
    grads = homophily_backward(net, hops, cache, d, 0.0)
    eps = 1e-6
    rng = np.random.default_rng(0)
    for w, g in zip(net.weights(), grads):
        for _ in range(5):
            i = tuple(rng.integers(s) for s in w.shape)
            old = w[i]
            w[i] = old + eps
            lp = loss_of()[0]
            w[i] = old - eps
            lm = loss_of()[0]
            w[i] = old
            assert g[i] == pytest.approx((lp - lm) / (2 * eps), rel=1e-4, abs=1e-8)


def test_homophily_estimates_track_truth():
    g = generate(CSBMParams(n=400, c=2, b=0.5, b_spread=0.4, mu=2.0, seed=1))
    net = train_homophily_net(g, normalize(g), HomophilyConfig(epochs=200))
    b_hat = estimate_local_homophily(net, g, normalize(g))
    assert np.all((0 <= b_hat) & (b_hat <= 1))
    assert np.corrcoef(b_hat, local_homophily(g))[0, 1] > 0.7


def test_empty_train_split_raises():
    g = GraphBundle(3, [[0, 1]], np.ones((3, 1)), [0, 1, 0], 2, ["test"] * 3)
    with pytest.raises(TrainingError):
        train_homophily_net(g, normalize(g))
