"""Adaptive moment estimation over a named parameter dictionary."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - self.beta1 ** t
        corr2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

    def state_arrays(self, prefix="opt"):
        out = {f"{prefix}/step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"{prefix}/m/{name}"] = self.m[name]
            out[f"{prefix}/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, prefix="opt"):
        self.step_count = int(arrays[f"{prefix}/step"][0])
        for name in self.params:
            self.m[name] = np.array(arrays[f"{prefix}/m/{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"{prefix}/v/{name}"], dtype=np.float64)
