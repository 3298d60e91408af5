"""Batched layers: conv2d, max-pool, affine, activations.

Image tensors are (N, C, H, W); vectors are (N, features). Each backward
closure skips gradients for parents that do not require them, so a frozen
convolutional stack costs forward time only.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, make

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _pool_scatter_py(x, out, g, gx, k, stride):
    n, c, ho, wo = out.shape
    for t in range(k * k):
        i, j = divmod(t, k)
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        view = x[:, :, i : i + hs : stride, j : j + ws : stride]
        if t == 0:
            unclaimed = np.ones(out.shape, dtype=bool)
        hit = (view == out) & unclaimed
        unclaimed &= ~hit
        gx[:, :, i : i + hs : stride, j : j + ws : stride] += np.where(hit, g, 0.0)


if numba is not None:

    @numba.njit(cache=True)
    def _pool_scatter(x, out, g, gx, k, stride):
        n, c, ho, wo = out.shape
        for a in range(n):
            for b in range(c):
                for r in range(ho):
                    for q in range(wo):
                        m = out[a, b, r, q]
                        # first window element equal to the max, row-major
                        for t in range(k * k):
                            i = r * stride + t // k
                            j = q * stride + t % k
                            if x[a, b, i, j] == m:
                                gx[a, b, i, j] += g[a, b, r, q]
                                break

else:  # pragma: no cover
    _pool_scatter = _pool_scatter_py


def conv_out_size(h: int, k: int, stride: int = 1, pad: int = 0) -> int:
    return (h + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects (N,C,H,W) input and (O,C,k,k) kernels, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, c_w, k, k2 = w.shape
    if c != c_w or k != k2:
        raise ValueError(f"kernel shape {w.shape} does not match input channels {c}")
    if b.shape != (o,):
        raise ValueError(f"bias shape {b.shape} does not match {o} output channels")
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} too large for input {h}x{wd}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    # im2col per image: (N, C, k, k, Ho, Wo), so the batched matmul lands in NCHW order
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + hs : stride, j : j + ws : stride]
    ckk, hw = c * k * k, ho * wo
    cols3 = cols.reshape(n, ckk, hw)
    w2 = w.data.reshape(o, ckk)
    out = np.matmul(w2, cols3).reshape(n, o, ho, wo)
    out += b.data[:, None, None]

    def backward(g):
        gx = gw = gb = None
        g3 = g.reshape(n, o, hw)
        if w.requires_grad:
            gw = sum(g3[m] @ cols3[m].T for m in range(n)).reshape(w.shape)
        if b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3).reshape(n, c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + hs : stride, j : j + ws : stride] += gcols[:, :, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw, gb

    return make(out, (x, w, b), backward)


def maxpool2d(x: Tensor, k: int, stride: int = 1) -> Tensor:
    """Window maximum; gradient goes to the first maximal element in row-major order."""
    n, c, h, wd = x.shape
    if k > h or k > wd:
        raise ValueError(f"pool window {k} larger than input {h}x{wd}")
    ho, wo = conv_out_size(h, k, stride), conv_out_size(wd, k, stride)
    if stride == 1:
        # separable: max over k rows, then over k columns
        rows = x.data[:, :, 0:ho].copy()
        for i in range(1, k):
            np.maximum(rows, x.data[:, :, i : i + ho], out=rows)
        out = rows[:, :, :, 0:wo].copy()
        for j in range(1, k):
            np.maximum(out, rows[:, :, :, j : j + wo], out=out)
    else:
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        out = x.data[:, :, 0:hs:stride, 0:ws:stride].copy()
        for t in range(1, k * k):
            i, j = divmod(t, k)
            np.maximum(out, x.data[:, :, i : i + hs : stride, j : j + ws : stride], out=out)

    def backward(g):
        gx = np.zeros_like(x.data)
        _pool_scatter(x.data, out, np.ascontiguousarray(g), gx, k, stride)
        return (gx,)

    return make(out, (x,), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ W.T + b for x of shape (N, n) and W of shape (m, n)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"affine shape mismatch: x{x.shape}, W{w.shape}, b{b.shape}")
    out = x.data @ w.data.T + b.data

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = None
        if w.requires_grad:
            # scratch is only safe when nothing has been accumulated into w yet
            gw = np.matmul(g.T, x.data, out=w.scratch() if w.grad is None else None)
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return make(out, (x, w, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1.0 - out * out),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind in ("linear", "identity", None):
        return x
    raise ValueError(f"unknown activation {kind!r}")


def flatten(x: Tensor) -> Tensor:
    return x.reshape((x.shape[0], -1))
