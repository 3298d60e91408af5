"""Parameter groups with freezing, and the RMSprop update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import Tensor

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


class ParamSet:
    """Ordered named parameters, each belonging to one group ("conv", "fc", ...).

    Freezing a group clears ``requires_grad`` on its tensors, so backward
    produces no gradient for them and :func:`rmsprop_step` leaves them alone.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._group: dict[str, str] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, data: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(data, requires_grad=group not in self.frozen, name=name)
        self._params[name] = t
        self._group[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def group_of(self, name: str) -> str:
        return self._group[name]

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(self._group.values()))

    def set_frozen(self, groups) -> None:
        self.frozen = set(groups)
        for name, t in self._params.items():
            t.requires_grad = self._group[name] not in self.frozen

    def is_frozen(self, name: str) -> bool:
        return self._group[name] in self.frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if not self.is_frozen(n)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: t.grad for n, t in self.trainable() if t.grad is not None}

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def copy(self) -> ParamSet:
        out = ParamSet()
        out.frozen = set(self.frozen)
        for n, t in self._params.items():
            out.add(n, t.data.copy(), self._group[n])
        return out


@dataclass
class OptState:
    lr: float = 1e-5
    alpha: float = 0.99
    eps: float = 1e-8
    square_avg: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def reset(self) -> None:
        self.square_avg.clear()
        self.steps = 0


def _rmsprop_numpy(p, g, s, lr, alpha, eps):
    s *= alpha
    s += (1.0 - alpha) * (g * g)
    p -= lr * g / (np.sqrt(s) + eps)


if numba is not None:

    # error_model="numpy" lets LLVM vectorize the division; results are IEEE-identical
    @numba.njit(cache=True, error_model="numpy")
    def _rmsprop_fused(p, g, s, lr, alpha, eps):
        pf, gf, sf = p.reshape(-1), g.reshape(-1), s.reshape(-1)
        for i in range(pf.size):
            gi = gf[i]
            si = alpha * sf[i] + (1.0 - alpha) * (gi * gi)
            sf[i] = si
            pf[i] -= lr * gi / (np.sqrt(si) + eps)

else:  # pragma: no cover
    _rmsprop_fused = _rmsprop_numpy


def rmsprop_step(params: ParamSet, state: OptState, grads: dict[str, np.ndarray] | None = None,
                 fused: bool = True) -> None:
    """One uncentered, momentum-free RMSprop update, in place.

    ``grads`` defaults to the ``.grad`` fields; a trainable parameter with no
    gradient is treated as having a zero gradient.
    """
    if grads is None:
        grads = params.grads()
    for name, t in params.trainable():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.data.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {t.data.shape}")
        s = state.square_avg.get(name)
        if s is None:
            s = state.square_avg[name] = np.zeros_like(t.data)
        g = np.ascontiguousarray(g, dtype=t.data.dtype)
        if fused:
            _rmsprop_fused(t.data, g, s, state.lr, state.alpha, state.eps)
        else:
            _rmsprop_numpy(t.data, g, s, state.lr, state.alpha, state.eps)
    state.steps += 1
