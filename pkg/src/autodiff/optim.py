"""
optim.py
Adam over a ParamSet.
"""
from typing import Dict

import numpy as np

from autodiff.params import ParamSet


class Adam:
    """Adam with bias correction; updates parameter tensors in place."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: Dict[str, np.ndarray] = {n: np.zeros_like(t.data) for n, t in params.items()}
        self._v: Dict[str, np.ndarray] = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, grads: ParamSet) -> None:
        self.step_count += 1
        correction1 = 1 - self.beta1 ** self.step_count
        correction2 = 1 - self.beta2 ** self.step_count
        for name, tensor in self.params.items():
            g = grads[name].data
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            tensor.data -= update.astype(tensor.dtype)
