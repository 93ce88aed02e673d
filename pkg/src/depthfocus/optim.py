from __future__ import annotations

import numpy as np

from .nn import Parameter


class Adam:
    """Adam with bias correction. ``beta1`` plays the role of momentum."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update.astype(p.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name in self.params:
            state[f"adam.m.{name}"] = self.m[name]
            state[f"adam.v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params.items():
            self.m[name] = np.array(state[f"adam.m.{name}"], dtype=p.dtype)
            self.v[name] = np.array(state[f"adam.v.{name}"], dtype=p.dtype)
        self.step_count = step_count
