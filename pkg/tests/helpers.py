"""Shared test utilities."""

import numpy as np

from cmpgnn.model import init_params, loss_and_gradients


def grad_check(layers, dropout, g, a):
    dims = (g.x.shape[1],) + (6,) * (layers - 1) + (g.num_classes,)
    params = init_params(dims, seed=layers)
    idx = g.index("train")
    kw = dict(train_mode=dropout > 0, seed=3, dropout=dropout, epoch=2)
    _, grads, _, _ = loss_and_gradients(params, a, g.x, g.y, idx, 5e-4, **kw)
    rng = np.random.default_rng(layers)
    eps = 1e-6
    worst = 0.0
    for w, gw in zip(params.weights, grads):
        for _ in range(8):
            i = tuple(rng.integers(s) for s in w.shape)
            old = w[i]
            w[i] = old + eps
            lp = loss_and_gradients(params, a, g.x, g.y, idx, 5e-4, **kw)[0]
            w[i] = old - eps
            lm = loss_and_gradients(params, a, g.x, g.y, idx, 5e-4, **kw)[0]
            w[i] = old
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(num - gw[i]) / max(abs(num), abs(gw[i]), 1e-7))
    return worst
