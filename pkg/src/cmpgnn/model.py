"""GCN classifier with hand-written backward pass and the calibrated EM training loop."""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .csbm import entropy
from .estimators import (EstimatorState, HomophilyConfig, TrainingError,
                         estimate_edge_error, estimate_local_homophily,
                         train_homophily_net)
from .graph import GraphBundle, normalize, smoothing_metric, true_edge_error
from .linalg import SparseMatrix, matmul, nll_loss_and_grad, row_log_softmax, spmm
from .mp import apply_verdicts, calibrate, edge_verdicts, SignSource
from .optim import Adam

MODES = ("S-S", "S-B", "B-S", "B-B")
SCHEME_CHOICES = ("plane", "signed", "blocked", "calibrated")


@dataclass
class ModelParams:
    weights: list
    dims: tuple
    init_seed: int = 0

    def copy(self) -> ModelParams:
        return ModelParams([w.copy() for w in self.weights], self.dims, self.init_seed)


def init_params(dims, seed: int) -> ModelParams:
    """Glorot-uniform weights for a GCN with layer widths ``dims``."""
    rng = np.random.default_rng([seed, 0x6C])
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
    return ModelParams(weights, tuple(dims), seed)


@dataclass(frozen=True)
class RunConfig:
    layers: int = 2
    hidden: int = 64
    lr: float = 1e-3
    weight_decay: float = 5e-4
    dropout: float = 0.5
    epochs: int = 1000
    patience: int = 100
    seed: int = 0
    scheme: str = "plane"
    calibrate: bool = False
    norm: str = "sym-selfloop"
    b_endpoint: str = "row"
    # "oracle", "predicted" or "forced:<error rate>"
    sign_source: str = "predicted"
    live_signs: bool = False
    # plane-MP epochs before predictions are trusted for signing
    warmup_epochs: int = 1
    force_e: float | None = None
    pessimistic_start: bool = False
    # ablation: how negative edges are treated when Z<0 / Z>=0, e.g. "B-S"
    z_policy: str | None = None
    homophily_lr: float = 0.01
    homophily_epochs: int = 1000
    homophily_depth: int = 2

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.warmup_epochs < 1:
            raise ValueError("warmup_epochs must be at least 1")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.scheme not in SCHEME_CHOICES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.z_policy is not None and self.z_policy not in MODES:
            raise ValueError(f"unknown z policy {self.z_policy!r}")
        if self.b_endpoint not in ("row", "min"):
            raise ValueError("b_endpoint must be 'row' or 'min'")
        if self.norm not in ("row", "sym", "sym-selfloop"):
            raise ValueError(f"unknown normalization {self.norm!r}")
        parse_sign_source(self.sign_source)

    @property
    def mp_scheme(self) -> str:
        if self.scheme == "calibrated" or self.z_policy is not None:
            return "signed"
        return self.scheme

    @property
    def uses_calibration(self) -> bool:
        return self.scheme == "calibrated" or self.calibrate or self.z_policy is not None

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


def parse_sign_source(text: str) -> tuple[str, float]:
    if text == "oracle":
        return "oracle", 0.0
    if text == "predicted":
        return "predicted", 0.0
    if text.startswith("forced:"):
        rate = float(text.split(":", 1)[1])
        if not 0.0 <= rate <= 1.0:
            raise ValueError("forced error rate must lie in [0, 1]")
        return "forced", rate
    raise ValueError(f"unknown sign source {text!r}")


@dataclass
class TrainState:
    params: ModelParams
    opt: Adam
    best_params: ModelParams
    best_val: float = 0.0
    best_epoch: int = 0
    epoch: int = 0
    estimator: EstimatorState | None = None
    best_adjacency: SparseMatrix | None = None
    best_predictions: np.ndarray | None = None
    log: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# forward / backward


def dropout_mask(shape, rate: float, seed: int, epoch: int, layer: int) -> np.ndarray:
    rng = np.random.default_rng([seed, epoch, layer, 0xD0])
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(params: ModelParams, a: SparseMatrix, x: np.ndarray, train_mode: bool = False,
            seed: int = 0, dropout: float = 0.0, epoch: int = 0, first_hop=None):
    """Log-probabilities of an ``L``-layer GCN and the cache for :func:`backward`.

    ``first_hop`` may supply a precomputed ``a @ x``.
    """
    h = x
    cache = {"agg": [], "pre": [], "masks": [], "inputs": []}
    n_layers = len(params.weights)
    for li, w in enumerate(params.weights):
        agg = first_hop if (li == 0 and first_hop is not None) else spmm(a, h)
        z = matmul(agg, w)
        cache["inputs"].append(h)
        cache["agg"].append(agg)
        cache["pre"].append(z)
        if li < n_layers - 1:
            h = np.maximum(z, 0.0)
            mask = None
            if train_mode and dropout > 0:
                mask = dropout_mask(h.shape, dropout, seed, epoch, li)
                h = h * mask
            cache["masks"].append(mask)
        else:
            h = z
    cache["logits"] = h
    return row_log_softmax(h), cache


def backward(params: ModelParams, a_t: SparseMatrix, cache, dlogits: np.ndarray,
             weight_decay: float) -> list:
    """Gradients of the loss w.r.t. each weight; ``a_t`` is the transposed adjacency."""
    grads = [None] * len(params.weights)
    delta = dlogits
    for li in range(len(params.weights) - 1, -1, -1):
        w = params.weights[li]
        grads[li] = matmul(cache["agg"][li].T, delta) + weight_decay * w
        if li == 0:
            break
        d_in = spmm(a_t, matmul(delta, w.T))
        mask = cache["masks"][li - 1]
        if mask is not None:
            d_in = d_in * mask
        delta = d_in * (cache["pre"][li - 1] > 0)
    return grads


def loss_and_gradients(params: ModelParams, a: SparseMatrix, x: np.ndarray, y, train_mask,
                       weight_decay: float = 0.0, a_t: SparseMatrix | None = None, **fwd):
    """NLL on ``train_mask`` plus ``weight_decay/2 * sum ||W||^2`` and exact gradients."""
    logp, cache = forward(params, a, x, **fwd)
    loss, dlogits = nll_loss_and_grad(logp, y, train_mask)
    loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in params.weights)
    grads = backward(params, a.transpose() if a_t is None else a_t, cache, dlogits, weight_decay)
    return loss, grads, logp, cache


def optimizer_step(params: ModelParams, opt: Adam, grads, lr: float | None = None) -> ModelParams:
    opt.step(params.weights, grads, lr)
    return params


def predict(logp: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(logp, axis=1)


def accuracy(pred: np.ndarray, y: np.ndarray, idx: np.ndarray) -> float:
    if len(idx) == 0:
        raise ValueError("empty split")
    return float(np.mean(pred[idx] == y[idx]))


def evaluate(params: ModelParams, g: GraphBundle, a: SparseMatrix, split: str = "test") -> float:
    idx = g.index(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    logp, _ = forward(params, a, g.x)
    return accuracy(predict(logp), g.y, idx)


def inter_class_distance(h: np.ndarray, labels) -> float:
    """Mean pairwise L2 distance between class centroids of ``h``."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    cent = np.array([h[labels == k].mean(axis=0) for k in classes])
    dists = [np.linalg.norm(cent[i] - cent[j])
             for i in range(len(cent)) for j in range(i + 1, len(cent))]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# training loop


def _policy_actions(cfg: RunConfig) -> tuple[str, str]:
    if cfg.z_policy is None:
        return "block", "keep"
    neg, pos = cfg.z_policy.split("-")
    return ("block" if neg == "B" else "keep"), ("block" if pos == "B" else "keep")


def homophily_estimates(g: GraphBundle, cfg: RunConfig, norm=None) -> np.ndarray:
    norm = norm or normalize(g, cfg.norm)
    hcfg = HomophilyConfig(depth=cfg.homophily_depth, hidden=cfg.hidden, lr=cfg.homophily_lr,
                           weight_decay=cfg.weight_decay, dropout=cfg.dropout,
                           epochs=cfg.homophily_epochs, seed=cfg.seed)
    net = train_homophily_net(g, norm, hcfg)
    return estimate_local_homophily(net, g, norm)


def em_train(g: GraphBundle, cfg: RunConfig, b_hat: np.ndarray | None = None):
    """Alternate edge-error estimation (E) with calibrated propagation and an
    optimizer step (M), keeping the best-validation checkpoint.

    Returns ``(TrainState, summary)``. ``b_hat`` skips homophily-net training.
    """
    train_idx, val_idx = g.index("train"), g.index("val")
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("graph needs nonempty train and val splits")
    norm = normalize(g, cfg.norm)
    calibrating = cfg.uses_calibration
    if calibrating and b_hat is None:
        b_hat = homophily_estimates(g, cfg, norm)
    if b_hat is None:
        b_hat = np.zeros(g.n)
    neg_action, pos_action = _policy_actions(cfg)

    dims = (g.x.shape[1],) + (cfg.hidden,) * (cfg.layers - 1) + (g.num_classes,)
    params = init_params(dims, cfg.seed)
    opt = Adam([w.shape for w in params.weights], lr=cfg.lr)
    state = TrainState(params, opt, params.copy(),
                       estimator=EstimatorState(b_hat=b_hat), best_adjacency=norm.matrix)
    kind, rate = parse_sign_source(cfg.sign_source)
    fixed_verdicts = None
    if kind == "oracle":
        fixed_verdicts = edge_verdicts(g, SignSource.oracle())
    elif kind == "forced":
        fixed_verdicts = edge_verdicts(g, SignSource.forced(rate, cfg.seed))

    test_idx = g.index("test")
    live_preds = predict(forward(params, norm.matrix, g.x)[0])
    alpha_prev = 0.0
    since = 0
    cached_first = (None, None, None)
    for t in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            # E-step
            if cfg.force_e is not None:
                e_t = float(cfg.force_e)
            elif t == 1 and cfg.pessimistic_start:
                e_t = 1.0 - 1.0 / g.num_classes
            else:
                e_t = estimate_edge_error(alpha_prev, g.num_classes)
            true_e = true_edge_error(g, live_preds) if g.num_edges else float("nan")

            # M-step: adjacency for this epoch
            blocked = 0
            z_neg = 0
            sign_err = float("nan")
            scheme = cfg.mp_scheme
            warming = scheme != "plane" and fixed_verdicts is None and t <= cfg.warmup_epochs
            if scheme == "plane":
                a = norm.matrix
            else:
                if fixed_verdicts is not None:
                    verdicts = fixed_verdicts
                else:
                    source = live_preds if cfg.live_signs else state.best_predictions
                    if source is None:
                        source = live_preds  # first pass after the warm-up
                    verdicts = source[g.edges[:, 0]] != source[g.edges[:, 1]]
                    if g.num_edges:
                        sign_err = true_edge_error(g, source)
                if warming:
                    a = norm.matrix  # plane MP until predictions exist to sign with
                else:
                    a = apply_verdicts(norm, scheme, verdicts)
                    if calibrating:
                        cal = calibrate(a, b_hat, e_t, cfg.b_endpoint, neg_action, pos_action)
                        a, blocked, z_neg = cal.matrix, cal.blocked_count, len(cal.z_negative_nodes)
            if cached_first[0] is not a:
                cached_first = (a, spmm(a, g.x), a.transpose())
            a_t = cached_first[2]

            loss, grads, _, _ = loss_and_gradients(
                params, a, g.x, g.y, train_idx, cfg.weight_decay, a_t=a_t, train_mode=True,
                seed=cfg.seed, dropout=cfg.dropout, epoch=t, first_hop=cached_first[1])
            if not np.isfinite(loss):
                raise TrainingError("loss is not finite")
            optimizer_step(params, opt, grads)

            logp, cache = forward(params, a, g.x, first_hop=cached_first[1])
        except Exception as exc:
            raise TrainingError(f"epoch {t}: {exc}") from exc
        preds = predict(logp)
        alpha_t = accuracy(preds, g.y, val_idx)
        probs = np.exp(logp[test_idx]) if len(test_idx) else np.exp(logp)
        state.log.append({
            "epoch": t,
            "train_loss": loss,
            "alpha": alpha_t,
            "e_t": e_t,
            "mean_b_hat": float(np.mean(b_hat)),
            "blocked_count": blocked,
            "smoothing": smoothing_metric(cache["logits"]),
            "true_e": true_e,
            "seconds": time.perf_counter() - t0,
            "alpha_prev": alpha_prev,
            "z_negative_nodes": z_neg,
            "sign_error": sign_err,
            "mean_entropy": float(np.mean(entropy(probs))),
            "entropy_mean_pred": float(entropy(probs.mean(axis=0))),
        })
        # warm-up epochs are plane MP and never become the checkpoint of a signed run
        if not warming and alpha_t > state.best_val:
            state.best_val = alpha_t
            state.best_epoch = t
            state.best_params = params.copy()
            state.best_adjacency = a
            state.best_predictions = preds
            since = 0
        elif not warming:
            since += 1
        live_preds = preds
        alpha_prev = alpha_t
        state.epoch = t
        state.estimator.e_t = e_t
        state.estimator.alpha_prev = alpha_prev
        state.estimator.epoch = t
        if since >= cfg.patience:
            break

    test_acc = (evaluate(state.best_params, g, state.best_adjacency, "test")
                if len(test_idx) else float("nan"))
    summary = {
        "config": cfg.to_dict(),
        "best_val": state.best_val,
        "best_epoch": state.best_epoch,
        "test_accuracy": test_acc,
        "epochs_run": state.epoch,
    }
    return state, summary


def first_layer_embedding(params: ModelParams, a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Hidden representation after the first propagation (eval mode)."""
    _, cache = forward(params, a, x)
    z = cache["pre"][0]
    return np.maximum(z, 0.0) if len(params.weights) > 1 else z


def ablation_q3(g: GraphBundle, cfg: RunConfig, modes=MODES, b_hat=None) -> dict:
    """Test accuracy per negative-edge policy, all runs sharing seed and b_hat."""
    base = replace(cfg, scheme="signed", calibrate=False)
    if b_hat is None:
        b_hat = homophily_estimates(g, base)
    out = {}
    for mode in modes:
        _, summary = em_train(g, replace(base, z_policy=mode), b_hat=b_hat)
        out[mode] = summary["test_accuracy"]
    return out


# ---------------------------------------------------------------------------
# checkpoint file: b"CMP1", u32 version, 32-byte config digest, u32 count,
# then per weight u32 rows, u32 cols and rows*cols little-endian float64


MAGIC = b"CMP1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, cfg: RunConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(cfg.digest())
        fh.write(struct.pack("<I", len(params.weights)))
        for w in params.weights:
            fh.write(struct.pack("<II", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[list, bytes]:
    """Return ``(weights, config_digest)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("not a CMP1 checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = blob[8:40]
    (count,) = struct.unpack_from("<I", blob, 40)
    off = 44
    weights = []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", blob, off)
        off += 8
        size = rows * cols * 8
        if off + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        weights.append(np.frombuffer(blob, dtype="<f8", count=rows * cols,
                                     offset=off).reshape(rows, cols).copy())
        off += size
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return weights, digest
