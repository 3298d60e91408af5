"""Central finite differences, used as the independent gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def finite_diff_grad(f: Callable[[], float], params: Sequence[np.ndarray], eps: float = 1e-5) -> list[np.ndarray]:
    """Gradient of ``f()`` with respect to each array in ``params``.

    The arrays are perturbed in place one coordinate at a time and restored
    afterwards, so ``f`` should read them rather than copies.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("parameters must be contiguous so they can be perturbed in place")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
