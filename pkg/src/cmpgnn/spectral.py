"""Constructed-matrix suite for spectral radius, unit-circle and smoothing checks."""

from __future__ import annotations

import numpy as np

from .csbm import CSBMParams, generate
from .graph import GraphBundle, normalize, smoothing_metric
from .linalg import SparseMatrix, connected_components, spectral_radius, spmm, unit_circle_count
from .mp import SignSource, apply_verdicts, edge_verdicts, renormalize_rows


def random_row_stochastic(n: int, density: float, rng) -> SparseMatrix:
    """Random nonnegative matrix with a positive diagonal and unit row sums."""
    m = (rng.random((n, n)) < density) * rng.random((n, n))
    np.fill_diagonal(m, rng.random(n) + 0.1)
    return SparseMatrix.from_dense(m / m.sum(axis=1, keepdims=True))


def cycle_graph(n: int) -> np.ndarray:
    """Dense adjacency of an n-cycle (irreducible)."""
    a = np.zeros((n, n))
    idx = np.arange(n)
    a[idx, (idx + 1) % n] = 1.0
    a[(idx + 1) % n, idx] = 1.0
    return a


def irreducible_substochastic(n: int, rng, deficit: float = 0.05) -> SparseMatrix:
    """Row-stochastic on a connected support, then one row shrunk by ``deficit``."""
    m = cycle_graph(n) * (rng.random((n, n)) + 0.1)
    m += np.eye(n) * (rng.random(n) + 0.1)
    m /= m.sum(axis=1, keepdims=True)
    m[0] *= 1.0 - deficit
    return SparseMatrix.from_dense(m)


def triangle_signed(n_per_class: int = 20, seed: int = 0) -> SparseMatrix:
    """Absolute value of a row-normalized 3-class graph signed by true labels.

    Every cross-class edge is negated. Three mutually heterophilic classes
    cannot be 2-colored consistently, so the signing is unbalanced and the
    matrix has spectral radius strictly below one. The absolute-value check is
    the row-stochastic case.
    """
    g = _complete_multipartite(3, n_per_class, seed)
    norm = normalize(g, "row")
    return apply_verdicts(norm, "signed", edge_verdicts(g, SignSource.oracle()))


def _complete_multipartite(k: int, size: int, seed: int) -> GraphBundle:
    n = k * size
    y = np.repeat(np.arange(k), size)
    rng = np.random.default_rng(seed)
    u, v = np.triu_indices(n, 1)
    # keep all cross-class edges and a random half of the same-class ones
    keep = (y[u] != y[v]) | (rng.random(len(u)) < 0.5)
    edges = np.stack([u[keep], v[keep]], axis=1)
    return GraphBundle(n=n, edges=edges, x=np.zeros((n, 1)), y=y, num_classes=k,
                       split=np.array(["train"] * n))


def k_block_graph(k: int, n_per_block: int = 30, p_in: float = 0.3, p_cross: float = 0.05,
                  seed: int = 0) -> GraphBundle:
    """``k`` label blocks, each connected inside, joined by heterophilic edges."""
    rng = np.random.default_rng([seed, k])
    n = k * n_per_block
    y = np.repeat(np.arange(k), n_per_block)
    u, v = np.triu_indices(n, 1)
    same = y[u] == y[v]
    # a path inside every block guarantees each block stays connected
    chain = same & (v == u + 1)
    keep = chain | (same & (rng.random(len(u)) < p_in)) | (~same & (rng.random(len(u)) < p_cross))
    if k > 1 and not np.any(keep & ~same):
        keep[np.flatnonzero(~same)[0]] = True
    edges = np.stack([u[keep], v[keep]], axis=1)
    x = rng.normal(size=(n, 2))
    return GraphBundle(n=n, edges=edges, x=x, y=y, num_classes=max(k, 1),
                       split=np.array(["train"] * n))


def blocked_operator(g: GraphBundle, renormalize: bool = True, mode: str = "row") -> SparseMatrix:
    """Row-normalized adjacency with every heterophilic edge zeroed."""
    a = apply_verdicts(normalize(g, mode), "blocked", edge_verdicts(g, SignSource.oracle()))
    return renormalize_rows(a) if renormalize else a


def smoothing_curve(a: SparseMatrix, h0: np.ndarray, hops: int = 50) -> np.ndarray:
    """``mu(A^l H0) / mu(H0)`` for ``l = 0..hops``."""
    base = smoothing_metric(h0)
    if base == 0:
        raise ValueError("initial features are already fully smoothed")
    out = [1.0]
    h = h0
    for _ in range(hops):
        h = spmm(a, h)
        out.append(smoothing_metric(h) / base)
    return np.array(out)


def product_spread(mats, length: int, rng) -> float:
    """Max column spread of a product of ``length`` randomly drawn matrices.

    Products of row-stochastic matrices with positive diagonals over a
    connected support converge to rank one; the spread tends to zero.
    """
    p = np.eye(mats[0].rows)
    for _ in range(length):
        p = mats[rng.integers(len(mats))].to_dense() @ p
    return float(np.max(p.max(axis=0) - p.min(axis=0)))


def run_suite(seed: int = 0, hops: int = 50, ks=(1, 2, 3, 5)) -> list[dict]:
    """Evaluate every spectral invariant; each row carries ``passed``."""
    rng = np.random.default_rng(seed)
    rows = []

    def add(name, value, target, passed):
        rows.append({"check": name, "value": float(value), "target": target, "passed": bool(passed)})

    rs = random_row_stochastic(40, 0.2, rng)
    rho = spectral_radius(rs).radius
    add("row_stochastic_radius", rho, "1 +- 1e-6", abs(rho - 1.0) <= 1e-6)

    sub = irreducible_substochastic(40, rng)
    rho = spectral_radius(sub).radius
    add("irreducible_substochastic_radius", rho, "< 1 - 1e-3", rho < 1 - 1e-3)

    tri = triangle_signed(seed=seed)
    rho = spectral_radius(tri).radius
    add("unbalanced_signed_radius", rho, "< 1 - 1e-3", rho < 1 - 1e-3)

    for k in ks:
        g = k_block_graph(k, seed=seed)
        cnt = unit_circle_count(blocked_operator(g))
        add(f"blocked_unit_circle_count_k{k}", cnt, f"== {k}", cnt == k)

    mats = [random_row_stochastic(20, 0.3, rng) for _ in range(5)]
    spread = product_spread(mats, 200, rng)
    add("random_product_spread", spread, "< 1e-6", spread < 1e-6)

    g = generate(CSBMParams(n=400, c=2, b=0.7, degree=10, feat_dim=4, seed=seed))
    plane = normalize(g, "row").matrix
    components = len(np.unique(connected_components(plane)))
    curve = smoothing_curve(plane, g.x, hops)
    add("plane_smoothing_ratio", curve[-1], "< 1e-3", components == 1 and curve[-1] < 1e-3)
    blocked = blocked_operator(g)
    parts = len(np.unique(connected_components(blocked)))
    curve_b = smoothing_curve(blocked, g.x, hops)
    add("blocked_smoothing_ratio", curve_b[-1], ">= 0.1", parts > 1 and curve_b[-1] >= 0.1)
    return rows
