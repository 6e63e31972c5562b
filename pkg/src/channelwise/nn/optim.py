"""Adam optimizer over a dict of named parameter arrays."""

import numpy as np


class Adam:
    """Adam with bias-corrected moments (Kingma & Ba defaults).

    Parameters are updated in place, in sorted-name order.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != params[name].shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        scale = 1.0
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in sorted(grads)))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = grads[name] * scale
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params
