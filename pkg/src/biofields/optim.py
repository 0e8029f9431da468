"""Adam optimizer over autodiff parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NumericalError


class Adam:
    """Adam with bias correction; eps sits outside the square root.

        m <- b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
        v <- b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
        p <- p - lr * mhat / (sqrt(vhat) + eps)

    Parameters with ``grad is None`` are skipped (treated as zero gradient,
    but without burning moment updates). A non-finite gradient aborts the
    step with an error naming the offending parameter.
    """

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        for i, p in enumerate(self.params):
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError(f"optimizer param {i} is not a trainable Tensor")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        """Moments and step count, keyed by parameter name."""
        out = {"t": np.array(float(self.t))}
        for p, m, v in zip(self.params, self._m, self._v):
            out[f"m.{p.name}"] = m.copy()
            out[f"v.{p.name}"] = v.copy()
        return out

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for i, p in enumerate(self.params):
            self._m[i] = np.asarray(state[f"m.{p.name}"], dtype=np.float64).copy()
            self._v[i] = np.asarray(state[f"v.{p.name}"], dtype=np.float64).copy()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                name = p.name or f"param[{i}]"
                raise NumericalError(f"non-finite gradient in {name} at step {self.t}")
            m = self._m[i]
            v = self._v[i]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
