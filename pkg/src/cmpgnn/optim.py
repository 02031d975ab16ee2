import numpy as np


class Adam:
    """Adam with bias correction. Weight decay is expected inside the gradient."""

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, weights, grads, lr=None):
        """Update ``weights`` in place and return them."""
        lr = self.lr if lr is None else lr
        if len(weights) != len(self.m):
            raise ValueError("weights do not match optimizer state")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for w, g, m, v in zip(weights, grads, self.m, self.v):
            if g.shape != m.shape:
                raise ValueError("gradient shape does not match moments")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return weights
