"""AdamW with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np

from .errors import BnnError


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)

    def step(self, params, lr: float):
        """One update of every parameter in ``params`` from its ``grad``.

        ``w <- w - lr * (m_hat / (sqrt(s_hat) + eps) + weight_decay * w)``
        """
        if not lr > 0:
            raise BnnError("invalid-learning-rate", repr(lr))
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise BnnError("non-finite-gradient", p.name)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            g = p.grad.astype(np.float64)
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros(p.real.shape)
                self.s[p.name] = np.zeros(p.real.shape)
            s = self.s[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            s *= self.beta2
            s += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(s / c2) + self.eps) + self.weight_decay * p.real
            p.real[...] = (p.real - lr * update).astype(p.real.dtype)
