import numpy as np
import pytest

from cmpgnn.csbm import CSBMParams, generate
from cmpgnn.graph import local_homophily, normalize
from cmpgnn.mp import SignSource, build_adjacency
from cmpgnn.model import (CheckpointError, RunConfig, ablation_q3, em_train, evaluate, forward,
                          init_params, inter_class_distance, load_checkpoint,
                          save_checkpoint)

from helpers import grad_check


@pytest.mark.parametrize("layers", [1, 2, 3])
@pytest.mark.parametrize("scheme", ["plane", "signed"])
def test_gradient_check(layers, scheme, small_graph):
    norm = normalize(small_graph)
    a = build_adjacency(norm, scheme, SignSource.oracle(), small_graph)
    assert grad_check(layers, 0.0, small_graph, a) <= 1e-4
    assert grad_check(layers, 0.5, small_graph, a) <= 1e-4


def test_forward_matches_dense(small_graph):
    a = normalize(small_graph).matrix
    params = init_params((5, 4, 3), 0)
    logp, _ = forward(params, a, small_graph.x)
    d = a.to_dense()
    h = np.maximum(d @ small_graph.x @ params.weights[0], 0)
    z = d @ h @ params.weights[1]
    ref = z - np.log(np.exp(z).sum(1, keepdims=True))
    np.testing.assert_allclose(logp, ref, atol=1e-12)


@pytest.fixture(scope="module")
def csbm_graph():
    return generate(CSBMParams(n=200, c=2, b=0.8, mu=1.5, degree=6, seed=2))


def test_determinism_bitwise(csbm_graph):
    cfg = RunConfig(epochs=30, scheme="calibrated", homophily_epochs=20, seed=4)
    s1, m1 = em_train(csbm_graph, cfg)
    s2, m2 = em_train(csbm_graph, cfg)
    strip = lambda log: [{k: v for k, v in r.items() if k != "seconds"} for r in log]
    assert strip(s1.log) == strip(s2.log)
    for w1, w2 in zip(s1.best_params.weights, s2.best_params.weights):
        assert w1.tobytes() == w2.tobytes()
    assert m1 == m2


def test_checkpoint_is_best_validation(csbm_graph):
    state, summary = em_train(csbm_graph, RunConfig(epochs=60, scheme="signed", seed=1))
    best = max(r["alpha"] for r in state.log if r["epoch"] > 1)
    assert summary["best_val"] == best
    assert evaluate(state.best_params, csbm_graph, state.best_adjacency, "val") == best
    assert summary["test_accuracy"] == evaluate(state.best_params, csbm_graph,
                                                state.best_adjacency, "test")


def test_forced_zero_error_equals_signed(csbm_graph):
    b_hat = local_homophily(csbm_graph)
    base = dict(epochs=25, seed=0, sign_source="oracle")
    s_sig, _ = em_train(csbm_graph, RunConfig(scheme="signed", **base))
    s_cal, _ = em_train(csbm_graph, RunConfig(scheme="calibrated", force_e=0.0, **base), b_hat=b_hat)
    assert [r["train_loss"] for r in s_sig.log] == [r["train_loss"] for r in s_cal.log]
    assert all(r["blocked_count"] == 0 for r in s_cal.log)


def test_high_error_blocks_from_first_epoch():
    g = generate(CSBMParams(n=200, c=2, b=0.9, degree=10, seed=0))
    state, _ = em_train(g, RunConfig(epochs=3, scheme="calibrated", force_e=0.9,
                                     sign_source="forced:0.9"), b_hat=local_homophily(g))
    assert state.log[0]["blocked_count"] > 0


def test_plane_ignores_calibration_inputs(csbm_graph):
    a, _ = em_train(csbm_graph, RunConfig(epochs=15, scheme="plane"))
    b, _ = em_train(csbm_graph, RunConfig(epochs=15, scheme="plane", sign_source="oracle"))
    assert [r["train_loss"] for r in a.log] == [r["train_loss"] for r in b.log]


def test_early_stopping(csbm_graph):
    state, summary = em_train(csbm_graph, RunConfig(epochs=500, patience=5, scheme="plane"))
    assert summary["epochs_run"] < 500
    assert summary["epochs_run"] - summary["best_epoch"] == 5


def test_ablation_modes_equal_when_thresholds_never_cross(csbm_graph):
    # b_hat = 0 keeps 1 - b - e >= 0 for every e <= 1: blocking never triggers in any mode
    res = ablation_q3(csbm_graph, RunConfig(epochs=15, sign_source="oracle", force_e=0.5),
                      modes=("S-S", "B-S"), b_hat=np.zeros(csbm_graph.n))
    assert res["S-S"] == res["B-S"]


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(scheme="gat")
    with pytest.raises(ValueError):
        RunConfig(sign_source="forced:2")
    with pytest.raises(ValueError):
        RunConfig(z_policy="X-Y")
    with pytest.raises(ValueError):
        RunConfig(lr=0)


def test_inter_class_distance():
    h = np.array([[0.0, 0], [0, 0], [2, 0], [2, 0]])
    assert inter_class_distance(h, [0, 0, 1, 1]) == pytest.approx(2.0)
    assert inter_class_distance(np.eye(3), [0, 1, 2]) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        inter_class_distance(h, [0, 0, 0, 0])


def test_checkpoint_round_trip(tmp_path, csbm_graph):
    cfg = RunConfig(epochs=20, scheme="plane")
    state, summary = em_train(csbm_graph, cfg)
    path = tmp_path / "ck.cmp"
    save_checkpoint(path, state.best_params, cfg)
    weights, digest = load_checkpoint(path)
    assert digest == cfg.digest()
    for w, ref in zip(weights, state.best_params.weights):
        np.testing.assert_array_equal(w, ref)
    state.best_params.weights = weights
    assert evaluate(state.best_params, csbm_graph, state.best_adjacency) == summary["test_accuracy"]
    raw = path.read_bytes()
    assert raw[:4] == b"CMP1"
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
