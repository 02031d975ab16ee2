import numpy as np
import pytest

from cmpgnn.linalg import spectral_radius, unit_circle_count
from cmpgnn.spectral import (blocked_operator, irreducible_substochastic, k_block_graph,
                             random_row_stochastic, run_suite, smoothing_curve, triangle_signed)


def test_suite_all_pass():
    rows = run_suite(seed=0)
    failed = [r["check"] for r in rows if not r["passed"]]
    assert not failed


@pytest.mark.parametrize("seed", range(5))
def test_radius_agrees_with_eigvals(seed):
    rng = np.random.default_rng(seed)
    for m in (random_row_stochastic(15, 0.3, rng), irreducible_substochastic(15, rng)):
        ref = np.max(np.abs(np.linalg.eigvals(m.to_dense())))
        assert spectral_radius(m, tol=1e-13).radius == pytest.approx(ref, abs=1e-6)


def test_unbalanced_signing_contracts():
    m = triangle_signed()
    np.testing.assert_allclose(np.abs(m.to_dense()).sum(1), 1.0)
    assert spectral_radius(m).radius < 0.99


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_blocked_components(k):
    op = blocked_operator(k_block_graph(k, seed=k))
    assert unit_circle_count(op) == k
    assert unit_circle_count(op, mode="components") == k


def test_smoothing_curve_monotone_for_plane():
    g = k_block_graph(1, n_per_block=40)
    from cmpgnn.graph import normalize
    curve = smoothing_curve(normalize(g, "row").matrix, g.x, 30)
    assert curve[0] == 1.0 and curve[-1] < 1e-2
    with pytest.raises(ValueError):
        smoothing_curve(normalize(g, "row").matrix, np.ones((g.n, 2)))
