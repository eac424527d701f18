"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class Probe:
    input_index: int
    flat_index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients from dominating."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], which: int, flat: int, h: float) -> float:
    arr = inputs[which].data.reshape(-1)
    orig = arr[flat]
    with no_grad():
        arr[flat] = orig + h
        up = f(*inputs).item()
        arr[flat] = orig - h
        down = f(*inputs).item()
    arr[flat] = orig
    return (up - down) / (2 * h)


def check_gradients(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    probes: int = 20,
    h: float = 1e-6,
    seed: int = 0,
) -> list[Probe]:
    """Compare backward() against central differences at random entries of ``inputs``.

    ``f`` must be a pure function of the inputs returning a scalar Tensor.
    Inputs should be float64 for meaningful comparisons at small ``h``.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = f(*inputs)
    grads = backward(out, inputs)
    rng = np.random.default_rng(seed)
    sizes = np.array([t.size for t in inputs], dtype=float)
    result = []
    for _ in range(probes):
        which = int(rng.choice(len(inputs), p=sizes / sizes.sum()))
        flat = int(rng.integers(inputs[which].size))
        num = numeric_grad(f, inputs, which, flat, h)
        result.append(Probe(which, flat, float(grads[which].reshape(-1)[flat]), num))
    return result


def max_rel_error(probes: list[Probe]) -> float:
    return max(p.rel_error for p in probes) if probes else 0.0
