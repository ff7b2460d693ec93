"""Adam optimizer for Tensor parameters."""

from __future__ import annotations

import numpy as np


class OptimizerError(RuntimeError):
    """Refused update: bad hyperparameters or non-finite gradients."""


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    A parameter with ``grad`` still unset is treated as having a zero
    gradient (its moments decay, its value stays put).  If any gradient
    contains NaN or infinity the whole step is refused and no state,
    parameter or moment, is touched.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate < 0:
            raise OptimizerError(f"learning_rate must be >= 0, got {learning_rate}")
        if not (0 < beta1 < 1) or not (0 < beta2 < 1):
            raise OptimizerError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
        if epsilon <= 0:
            raise OptimizerError(f"epsilon must be > 0, got {epsilon}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """Apply one Adam update in place on every parameter."""
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise OptimizerError(
                    f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise OptimizerError("non-finite gradient; update refused")
            grads.append(g)
        t = self.step_count + 1
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
        self.step_count = t
