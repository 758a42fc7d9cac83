"""Adam-family optimizers over lists of parameter tensors.

Two decay conventions, both needed here: the GAN phases use Adam with
L2-coupled decay (the decay term joins the gradient before the moment
updates), the transformer phase uses AdamW where decay multiplies the
parameter directly and never touches the moments.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .autodiff import Tensor
from .errors import ConfigurationError


class Adam:
    """Bias-corrected Adam; weight_decay is coupled (added to the gradient)."""

    decoupled = False

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ConfigurationError(f"betas must lie in [0, 1), got {betas}")
        if lr <= 0.0:
            raise ConfigurationError(f"lr must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if not self.decoupled and self.weight_decay:
                g = g + self.weight_decay * p.values
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.decoupled and self.weight_decay:
                update = update + self.weight_decay * p.values
            p.values = p.values - self.lr * update

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class AdamW(Adam):
    """Adam with decoupled decay: theta <- theta - lr * wd * theta, applied
    separately from the moment-driven update."""

    decoupled = True
