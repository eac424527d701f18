"""Adadelta with per-parameter accumulators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Adadelta:
    """Adadelta (Zeiler 2012) as used for training: ``lr=1.0, rho=0.95, eps=1e-7``.

    ``eg2`` and ``edx2`` are the decaying averages of squared gradients and
    squared updates, keyed by parameter name.
    """

    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-7
    eg2: dict[str, np.ndarray] = field(default_factory=dict)
    edx2: dict[str, np.ndarray] = field(default_factory=dict)

    def update(self, name: str, grad: np.ndarray) -> np.ndarray:
        """Advance the accumulators for one parameter and return its step ``lr * dx``."""
        eg2 = self.eg2.get(name)
        if eg2 is None:
            eg2 = np.zeros_like(grad)
            self.edx2[name] = np.zeros_like(grad)
        eg2 = self.rho * eg2 + (1 - self.rho) * grad * grad
        dx = -np.sqrt(self.edx2[name] + self.eps) / np.sqrt(eg2 + self.eps) * grad
        self.eg2[name] = eg2
        self.edx2[name] = self.rho * self.edx2[name] + (1 - self.rho) * dx * dx
        return self.lr * dx

    def step(self, params: dict[str, Tensor] | list[tuple[str, Tensor]], grads: dict[str, np.ndarray]) -> None:
        items = params.items() if isinstance(params, dict) else params
        for name, p in items:
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            p.data = (p.data + self.update(name, g.astype(p.dtype, copy=False))).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.eg2:
            out[f"{name}.eg2"] = self.eg2[name]
            out[f"{name}.edx2"] = self.edx2[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.eg2 = {k[: -len(".eg2")]: v.copy() for k, v in arrays.items() if k.endswith(".eg2")}
        self.edx2 = {k[: -len(".edx2")]: v.copy() for k, v in arrays.items() if k.endswith(".edx2")}


def adadelta_step(state: Adadelta, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
    state.step(params, grads)
    return params
