"""Central finite-difference checks for tape gradients (float64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, mul, sum_all


def project(out: Tensor, seed: int = 0) -> Tensor:
    """Reduce any tensor to a scalar through a fixed random projection."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return sum_all(mul(out, Tensor(r, dtype=out.dtype)))


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-3) -> np.ndarray:
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = fn().item()
        flat[i] = old - step
        down = fn().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-3) -> list[float]:
    """Relative error between tape and finite-difference gradients, per input.

    ``inputs`` must be float64 tensors with ``requires_grad`` set; ``fn``
    recomputes the scalar output from them.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
    with Tape() as tape:
        out = fn()
    analytic = tape.backward(out, list(inputs))
    return [relative_error(a, numeric_grad(fn, t, step)) for a, t in zip(analytic, inputs)]
