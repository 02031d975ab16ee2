"""Contextual stochastic block model: generator, closed forms, Monte-Carlo checks.

Class means lie on a circle of radius ``mu`` in the first two feature
coordinates at equally spaced angles (antipodal for two classes). For a
class-0 ego the aggregated cross-class mean ``k'`` is the average of the other
class means, which is exactly ``-k`` when ``c == 2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .graph import GraphBundle


class ConstructionError(ValueError):
    """The requested CSBM parameters cannot be realized."""


@dataclass(frozen=True)
class CSBMParams:
    n: int = 1000
    c: int = 2
    mu: float = 1.0
    feat_dim: int = 2
    b: float = 0.5
    degree: int = 10
    e: float = 0.0
    sigma: float = 1.0
    seed: int = 0
    # half-width of the per-node homophily spread; 0 gives every node exactly round(b*degree)
    b_spread: float = 0.0
    train_frac: float = 0.1
    val_frac: float = 0.45

    def __post_init__(self):
        if self.c < 2:
            raise ConstructionError("need at least two classes")
        if self.n % self.c:
            raise ConstructionError(f"n={self.n} is not divisible by c={self.c}")
        if self.c > 2 and self.feat_dim < 2:
            raise ConstructionError("more than two classes need feat_dim >= 2")
        if not (0.0 <= self.b <= 1.0 and 0.0 <= self.e <= 1.0):
            raise ConstructionError("b and e must lie in [0, 1]")
        if self.degree < 0 or (self.degree * self.n) % 2:
            raise ConstructionError("degree * n must be even")
        if self.sigma < 0 or self.mu < 0:
            raise ConstructionError("mu and sigma must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def parse_params(text: str, **defaults) -> CSBMParams:
    """Parse ``"n=1000,c=2,b=0.3"`` into :class:`CSBMParams`."""
    fields = CSBMParams.__dataclass_fields__
    kw = dict(defaults)
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        if key not in fields:
            raise ValueError(f"unknown CSBM parameter {key!r}")
        kw[key] = int(val) if fields[key].type in ("int", int) else float(val)
    return CSBMParams(**kw)


def class_means(params: CSBMParams) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(params.c) / params.c
    means = np.zeros((params.c, params.feat_dim))
    means[:, 0] = params.mu * np.cos(theta)
    if params.feat_dim > 1:
        means[:, 1] = params.mu * np.sin(theta)
    means[np.abs(means) < 1e-15] = 0.0
    return means


def ego_and_cross_means(params: CSBMParams, ego_class: int = 0) -> tuple[np.ndarray, np.ndarray]:
    means = class_means(params)
    others = np.delete(means, ego_class, axis=0)
    return means[ego_class], others.mean(axis=0)


# ---------------------------------------------------------------------------
# structure


def _same_degrees(params: CSBMParams, rng) -> np.ndarray:
    """Number of same-class neighbors per node, balanced so that stubs can pair."""
    d, c, m = params.degree, params.c, params.n // params.c
    if params.b_spread > 0:
        b = np.clip(rng.uniform(params.b - params.b_spread, params.b + params.b_spread,
                                params.n), 0.0, 1.0)
    else:
        b = np.full(params.n, params.b)
    r = np.rint(b * d).astype(np.int64).reshape(c, m)
    for k in range(c):
        if r[k].sum() % 2:
            j = rng.integers(m)
            r[k, j] += 1 if r[k, j] < d else -1
    if c == 2:
        # cross stubs must match one to one between the two classes
        while r[0].sum() != r[1].sum():
            big = 0 if r[0].sum() > r[1].sum() else 1
            diff = abs(int(r[0].sum() - r[1].sum()))
            step = 2 if diff >= 2 else 1
            cand = np.flatnonzero(r[big] >= step)
            if len(cand) == 0:
                raise ConstructionError("cannot balance cross-class stubs")
            j = rng.choice(cand)
            r[big, j] -= step
    if r.max() > m - 1:
        raise ConstructionError(f"{r.max()} same-class neighbors exceed class size {m}")
    cross = d - r
    if c > 2 and 2 * cross.sum(axis=1).max() > cross.sum():
        raise ConstructionError("cross-class stubs of one class exceed the rest")
    return r.reshape(-1)


def _repair(pairs: np.ndarray, bad_fn, rng, max_rounds: int = 2000) -> np.ndarray:
    """Degree-preserving swaps of second endpoints until ``bad_fn`` flags nothing."""
    for _ in range(max_rounds):
        bad = np.flatnonzero(bad_fn(pairs))
        if len(bad) == 0:
            return pairs
        partners = rng.integers(len(pairs), size=len(bad))
        for i, j in zip(bad, partners):
            pairs[i, 1], pairs[j, 1] = pairs[j, 1], pairs[i, 1]
    raise ConstructionError("stub pairing did not converge; parameters too dense")


def _flag(n, y=None, forbid_same_class=False):
    def bad_fn(pairs):
        u, v = pairs[:, 0], pairs[:, 1]
        bad = u == v
        if forbid_same_class:
            bad |= y[u] == y[v]
        keys = np.minimum(u, v) * n + np.maximum(u, v)
        _, first = np.unique(keys, return_index=True)
        dup = np.ones(len(keys), dtype=bool)
        dup[first] = False
        return bad | dup
    return bad_fn


def sample_structure(params: CSBMParams, rng) -> tuple[np.ndarray, np.ndarray]:
    """Exactly ``degree``-regular graph. Returns ``(edges, labels)``.

    Nodes are grouped by class (labels sorted). Each node gets its same-class
    stubs paired inside its class and its cross-class stubs paired across
    classes (configuration model with swap repair of loops and multi-edges).
    """
    n, c = params.n, params.c
    m = n // c
    y = np.repeat(np.arange(c), m)
    r = _same_degrees(params, rng)
    parts = []
    for k in range(c):
        nodes = np.arange(k * m, (k + 1) * m)
        stubs = rng.permutation(np.repeat(nodes, r[nodes]))
        if len(stubs):
            pairs = stubs.reshape(-1, 2).copy()
            parts.append(_repair(pairs, _flag(n), rng))
    cross = params.degree - r
    if c == 2:
        s0 = rng.permutation(np.repeat(np.arange(m), cross[:m]))
        s1 = rng.permutation(np.repeat(np.arange(m, n), cross[m:]))
        if len(s0):
            parts.append(_repair(np.stack([s0, s1], axis=1), _flag(n), rng))
    else:
        stubs = rng.permutation(np.repeat(np.arange(n), cross))
        if len(stubs):
            pairs = stubs.reshape(-1, 2).copy()
            parts.append(_repair(pairs, _flag(n, y, forbid_same_class=True), rng))
    edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    edges = np.sort(edges, axis=1)
    return edges, y


def _split(y, params: CSBMParams, rng) -> np.ndarray:
    split = np.full(len(y), "test", dtype="<U5")
    for k in range(params.c):
        members = rng.permutation(np.flatnonzero(y == k))
        n_tr = max(1, int(round(params.train_frac * len(members))))
        n_va = int(round(params.val_frac * len(members)))
        split[members[:n_tr]] = "train"
        split[members[n_tr:n_tr + n_va]] = "val"
    return split


def generate(params: CSBMParams) -> GraphBundle:
    rng = np.random.default_rng([params.seed, 0x5B])
    edges, y = sample_structure(params, rng)
    perm = rng.permutation(params.n)  # hide the class-sorted node order
    inv = np.empty_like(perm)
    inv[perm] = np.arange(params.n)
    edges = np.sort(inv[edges], axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    y = y[perm]
    x = class_means(params)[y] + params.sigma * rng.standard_normal((params.n, params.feat_dim))
    split = _split(y, params, rng)
    return GraphBundle(params.n, edges, x, y, params.c, split,
                       meta={"csbm": params.to_dict()})


# ---------------------------------------------------------------------------
# closed forms


def one_hop_coefficients(b: float, e: float, scheme: str) -> tuple[float, float]:
    """Coefficients of ``(k, k')`` in the neighbor term of the one-hop mean."""
    if scheme == "plane":
        return b, 1.0 - b
    if scheme == "signed":
        return (1 - 2 * e) * b, (1 - 2 * e) * (b - 1)
    if scheme == "blocked":
        return (1 - e) * b, e * (1 - b)
    raise ValueError(f"unknown scheme {scheme!r}")


def expected_one_hop(params: CSBMParams, scheme: str, d_prime: float | None = None,
                     b: float | None = None, e: float | None = None) -> np.ndarray:
    """Class-0 conditional mean after one hop of ``scheme``.

    ``({ck k + ck' k'} d' + k) / (d + 1)`` with the scheme coefficients of
    :func:`one_hop_coefficients`; on a regular graph ``d' = d``.
    """
    b = params.b if b is None else b
    e = params.e if e is None else e
    d = params.degree
    d_prime = d if d_prime is None else d_prime
    if d_prime < 0:
        raise ValueError("d_prime must be nonnegative")
    k, kp = ego_and_cross_means(params)
    ck, ckp = one_hop_coefficients(b, e, scheme)
    return ((ck * k + ckp * kp) * d_prime + k) / (d + 1)


def z_gaps(b: float, e: float, k, k_prime) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plane-signed, plane-blocked and signed-blocked gaps (shared d'/(d+1) dropped)."""
    if not (0 <= b <= 1 and 0 <= e <= 1):
        raise ValueError("b and e must lie in [0, 1]")
    k = np.asarray(k, dtype=np.float64)
    kp = np.asarray(k_prime, dtype=np.float64)
    z1 = (2 * e - 1) * (b * k + (b - 1) * kp)
    z2 = e * b * k + (1 - e) * (1 - b) * kp
    z3 = (1 - 2 * e) * k + (b - e) * kp
    return z1, z2, z3


def z_t(b_i: float, e_t: float) -> float:
    return 1.0 - b_i - e_t


GAP_INTEGRANDS = {
    # (integrand(b, e), e-range); b always spans [0, 1]
    "Z4": (lambda b, e: 1 - b - e + 2 * e * b, (0.5, 1.0)),
    "Z5": (lambda b, e: 1 - e - b, (0.0, 0.5)),
    "Z1": (lambda b, e: (2 * e - 1) * (b - (b - 1)), (0.0, 1.0)),  # k'=-k, projected on k/mu
    "Z2": (lambda b, e: e * b - (1 - e) * (1 - b), (0.0, 1.0)),
    "one": (lambda b, e: np.ones_like(b * e), (0.0, 1.0)),
}


def midpoint_integral(fn, b_range, e_range, resolution: int = 1000) -> float:
    if resolution < 1:
        raise ValueError("resolution must be positive")
    (b0, b1), (e0, e1) = b_range, e_range
    hb, he = (b1 - b0) / resolution, (e1 - e0) / resolution
    bb = b0 + hb * (np.arange(resolution) + 0.5)
    ee = e0 + he * (np.arange(resolution) + 0.5)
    B, E = np.meshgrid(bb, ee, indexing="ij")
    return float(np.sum(fn(B, E)) * hb * he)


def integrate_gap(which: str, resolution: int = 1000) -> float:
    """Midpoint-rule integral of a gap integrand over its (b, e) domain."""
    if resolution < 100:
        raise ValueError("resolution must be at least 100")
    fn, e_range = GAP_INTEGRANDS[which]
    return midpoint_integral(fn, (0.0, 1.0), e_range, resolution)


# ---------------------------------------------------------------------------
# Monte-Carlo verification


def _trial_rng(seed: int, trial: int):
    return np.random.default_rng([seed, trial, 0x3C])


def class_mean_one_hop(edges, y, x, ego_class: int = 0):
    """Return ``f(scheme, different)``: mean over ``ego_class`` nodes of one
    sym-selfloop hop under ``scheme``.

    Equivalent to ``spmm(apply_verdicts(normalize(g), scheme, different), x)``
    averaged over the class, but computed straight from the edge list with the
    scheme-independent parts shared between calls.
    """
    n = len(y)
    deg = np.bincount(edges.ravel(), minlength=n).astype(np.float64)
    u, v = edges[:, 0], edges[:, 1]
    w = 1.0 / np.sqrt((deg[u] + 1.0) * (deg[v] + 1.0))
    ego = y == ego_class
    count = ego.sum()
    self_term = (x[ego] / (deg[ego] + 1.0)[:, None]).sum(axis=0)
    eu, ev = ego[u], ego[v]
    xu, xv = x[v[eu]], x[u[ev]]

    def mean(scheme: str, different=None):
        ww = w
        if scheme != "plane":
            ww = np.where(different, (-1.0 if scheme == "signed" else 0.0) * w, w)
        return (self_term + ww[eu] @ xu + ww[ev] @ xv) / count

    return mean


def monte_carlo_cells(params: CSBMParams, cells, trials: int):
    """Empirical class-0 one-hop means for several ``(scheme, e)`` cells.

    Every trial samples one graph and one feature draw shared by all cells;
    each cell draws its own independent per-edge verdict errors, so trials stay
    independent within a cell. Returns ``{(scheme, e): (mean, stderr)}``.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    cells = list(cells)
    sums = {cell: [] for cell in cells}
    means = class_means(params)
    for t in range(trials):
        rng = _trial_rng(params.seed, t)
        edges, y = sample_structure(params, rng)
        x = means[y] + params.sigma * rng.standard_normal((params.n, params.feat_dim))
        truth = y[edges[:, 0]] != y[edges[:, 1]]
        one_hop = class_mean_one_hop(edges, y, x)
        for scheme, e in cells:
            diff = None
            if scheme != "plane":
                diff = truth ^ (rng.random(len(truth)) < e)
            sums[(scheme, e)].append(one_hop(scheme, diff))
    out = {}
    for cell, rows in sums.items():
        arr = np.array(rows)
        out[cell] = (arr.mean(axis=0), arr.std(axis=0, ddof=1) / np.sqrt(len(arr)))
    return out


def monte_carlo_one_hop(params: CSBMParams, scheme: str, trials: int = 1000):
    """``(mean, stderr)`` of the class-0 one-hop representation over ``trials`` graphs."""
    if trials < 100:
        raise ValueError("trials must be at least 100")
    return monte_carlo_cells(params, [(scheme, params.e)], trials)[(scheme, params.e)]


# ---------------------------------------------------------------------------
# uncertainty


def entropy(p, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=axis)


def entropy_experiment(params: CSBMParams, e_grid, epochs: int = 100, cfg=None,
                       seeds=(0,)):
    """Signed vs blocked twins trained under forced edge error ``e``.

    Returns rows ``(e, seed, epoch, H_signed, H_blocked, Hmean_signed,
    Hmean_blocked)``. ``H_*`` is the test-node average of the per-node
    predictive entropy; ``Hmean_*`` is the entropy of the test-averaged
    predicted distribution.
    """
    from .model import RunConfig, em_train

    base = cfg or RunConfig()
    rows = []
    for seed in seeds:
        g = generate(replace(params, seed=seed))
        for e in e_grid:
            if not 0 <= e <= 1:
                raise ValueError("e must lie in [0, 1]")
            logs = {}
            for scheme in ("signed", "blocked"):
                run = replace(base, scheme=scheme, calibrate=False, sign_source=f"forced:{e}",
                              epochs=epochs, patience=epochs + 1, seed=seed)
                state, _ = em_train(g, run)
                logs[scheme] = state.log
            for rs, rb in zip(logs["signed"], logs["blocked"]):
                rows.append((e, seed, rs["epoch"], rs["mean_entropy"], rb["mean_entropy"],
                             rs["entropy_mean_pred"], rb["entropy_mean_pred"]))
    return rows
