"""Per-node homophily and per-epoch edge-error estimation.

The homophily network sums a feature-only MLP branch and an even-hop branch
``sum_l A^(2l) X W_l`` before a row softmax. Local homophily is read off as
the mean agreement ``<B_i, B_j>`` of a node's soft prediction with its
neighbors'.
"""

from __future__ import annotations

from copy import deepcopy
from dataclasses import dataclass, field

import numpy as np

from .graph import GraphBundle, NormalizedAdjacency
from .linalg import matmul, nll_loss_and_grad, row_log_softmax, spmm
from .optim import Adam


class TrainingError(RuntimeError):
    pass


@dataclass
class EstimatorState:
    b_hat: np.ndarray
    e_t: float = 0.0
    alpha_prev: float = 0.0
    epoch: int = 0


@dataclass(frozen=True)
class HomophilyConfig:
    depth: int = 2
    hidden: int = 64
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    epochs: int = 1000
    patience: int = 100
    seed: int = 0
    # "both", "even" (even-hop branch only) or "mlp" (feature branch only)
    branches: str = "both"


@dataclass
class HomophilyNet:
    mlp_weights: list = field(default_factory=list)
    even_weights: list = field(default_factory=list)
    depth: int = 2
    branches: str = "both"
    best_val: float = 0.0
    epochs_run: int = 0

    def weights(self):
        return self.mlp_weights + self.even_weights


def even_hop_features(norm: NormalizedAdjacency, x: np.ndarray, depth: int) -> list:
    """``[X, A^2 X, A^4 X, ...]`` up to ``A^(2*floor(depth/2)) X``."""
    feats = [x]
    h = x
    for _ in range(depth // 2):
        h = spmm(norm.matrix, spmm(norm.matrix, h))
        feats.append(h)
    return feats


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_homophily_net(f: int, c: int, cfg: HomophilyConfig) -> HomophilyNet:
    rng = np.random.default_rng([cfg.seed, 0x40])
    n_mlp = max(1, cfg.depth)
    dims = [f] + [cfg.hidden] * (n_mlp - 1) + [c]
    mlp = [_glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    even = [_glorot(rng, f, c) for _ in range(cfg.depth // 2 + 1)]
    if cfg.branches == "even":
        mlp = []
    elif cfg.branches == "mlp":
        even = []
    elif cfg.branches != "both":
        raise ValueError(f"unknown branches {cfg.branches!r}")
    return HomophilyNet(mlp, even, cfg.depth, cfg.branches)


def homophily_logits(net: HomophilyNet, x: np.ndarray, hop_feats: list, *,
                     dropout: float = 0.0, rng=None):
    """Pre-softmax scores and a cache for :func:`homophily_backward`."""
    n = x.shape[0]
    c = (net.mlp_weights or net.even_weights)[-1].shape[1]
    out = np.zeros((n, c))
    acts, masks = [], []
    if net.mlp_weights:
        h = x
        for li, w in enumerate(net.mlp_weights):
            acts.append(h)
            z = matmul(h, w)
            if li < len(net.mlp_weights) - 1:
                z = np.maximum(z, 0.0)
                mask = None
                if rng is not None and dropout > 0:
                    mask = (rng.random(z.shape) >= dropout) / (1.0 - dropout)
                    z = z * mask
                masks.append(mask)
                h = z
            else:
                out += z
    for p, w in zip(hop_feats, net.even_weights):
        out += matmul(p, w)
    return out, (acts, masks)


def homophily_backward(net, hop_feats, cache, dlogits, weight_decay):
    acts, masks = cache
    mlp_grads = [None] * len(net.mlp_weights)
    delta = dlogits
    for li in range(len(net.mlp_weights) - 1, -1, -1):
        w = net.mlp_weights[li]
        mlp_grads[li] = matmul(acts[li].T, delta) + weight_decay * w
        if li > 0:
            delta = matmul(delta, w.T)
            if masks[li - 1] is not None:
                delta = delta * masks[li - 1]
            delta = delta * (acts[li] > 0)
    even_grads = [matmul(p.T, dlogits) + weight_decay * w
                  for p, w in zip(hop_feats, net.even_weights)]
    return mlp_grads + even_grads


def train_homophily_net(g: GraphBundle, norm: NormalizedAdjacency,
                        cfg: HomophilyConfig | None = None) -> HomophilyNet:
    """Fit the two-branch network on the train split, early-stopped on validation."""
    cfg = cfg or HomophilyConfig()
    train = g.index("train")
    val = g.index("val")
    if len(train) == 0:
        raise TrainingError("training split is empty")
    hop_feats = even_hop_features(norm, g.x, cfg.depth)
    net = init_homophily_net(g.x.shape[1], g.num_classes, cfg)
    weights = net.weights()
    opt = Adam([w.shape for w in weights], lr=cfg.lr)
    best = deepcopy(net)
    best_val, since = -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch, 0x41])
        logits, cache = homophily_logits(net, g.x, hop_feats, dropout=cfg.dropout, rng=rng)
        logp = row_log_softmax(logits)
        loss, dlogits = nll_loss_and_grad(logp, g.y, train)
        if not np.isfinite(loss):
            raise TrainingError(f"homophily net diverged at epoch {epoch}")
        opt.step(weights, homophily_backward(net, hop_feats, cache, dlogits, cfg.weight_decay))
        pred = np.argmax(homophily_logits(net, g.x, hop_feats)[0], axis=1)
        acc = float((pred[val] == g.y[val]).mean()) if len(val) else float((pred[train] == g.y[train]).mean())
        if acc > best_val:
            best_val, since = acc, 0
            best = deepcopy(net)
        else:
            since += 1
            if since >= cfg.patience:
                break
    best.best_val = best_val
    best.epochs_run = epoch
    return best


def homophily_probs(net: HomophilyNet, g: GraphBundle, norm: NormalizedAdjacency) -> np.ndarray:
    logits, _ = homophily_logits(net, g.x, even_hop_features(norm, g.x, net.depth))
    return np.exp(row_log_softmax(logits))


def neighbor_agreement(g: GraphBundle, probs: np.ndarray) -> np.ndarray:
    """Mean ``<B_i, B_j>`` over neighbors ``j`` of ``i``, clamped to [0, 1]; isolated -> 0."""
    u, v = g.edges[:, 0], g.edges[:, 1]
    dots = np.einsum("ij,ij->i", probs[u], probs[v])
    total = np.bincount(u, dots, minlength=g.n) + np.bincount(v, dots, minlength=g.n)
    deg = g.degrees()
    out = np.zeros(g.n)
    nz = deg > 0
    out[nz] = total[nz] / deg[nz]
    return np.clip(out, 0.0, 1.0)


def estimate_local_homophily(net: HomophilyNet, g: GraphBundle,
                             norm: NormalizedAdjacency) -> np.ndarray:
    return neighbor_agreement(g, homophily_probs(net, g, norm))


def self_product_homophily(probs: np.ndarray) -> np.ndarray:
    """Literal per-node ``B_i B_i^T`` (sum of squared class probabilities)."""
    return np.einsum("ij,ij->i", probs, probs)


def estimate_edge_error(alpha_prev: float, c: int) -> float:
    """Edge-error estimate ``1 - (a^2 + (1-a)^2 / (c-1))`` from validation accuracy."""
    if c < 2:
        raise ValueError("need at least two classes")
    if not 0.0 <= alpha_prev <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    e = 1.0 - (alpha_prev ** 2 + (1.0 - alpha_prev) ** 2 / (c - 1))
    return float(min(1.0, max(0.0, e)))


def edge_error_oracle(c: int, alpha: float, trials: int = 1_000_000, seed: int = 0,
                      homophily: float = 1.0) -> float:
    """Monte-Carlo edge error under independent per-node prediction errors.

    Each endpoint is predicted correctly with probability ``alpha`` and
    otherwise uniformly among the other ``c - 1`` classes. An edge counts as
    correct when the predicted relation (same/different) equals the true one.
    Endpoints share a uniformly drawn class with probability ``homophily``
    (1.0 is the same-label pair model the closed form describes) and otherwise
    get two distinct uniform classes.
    """
    if trials < 10_000:
        raise ValueError("trials must be at least 10^4")
    rng = np.random.default_rng([seed, c, int(round(alpha * 1e6)), 0xE0])
    yi = rng.integers(c, size=trials)
    same = rng.random(trials) < homophily
    yj = np.where(same, yi, (yi + rng.integers(1, c, size=trials)) % c)

    def predict(y):
        wrong = rng.random(trials) >= alpha
        shift = rng.integers(1, c, size=trials)
        return np.where(wrong, (y + shift) % c, y)

    pi, pj = predict(yi), predict(yj)
    correct = (pi == pj) == (yi == yj)
    return float(1.0 - correct.mean())
