"""A small tape-free reverse-mode autodiff engine over numpy arrays.

Every :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them; :meth:`Tensor.backward` walks the graph in reverse
topological order.  Image tensors are channel-last ``(B, H, W, C)``.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents if p.requires_grad)
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, (a, b), back)


def mul(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), back)


def silu(x):
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def back(g):
        x.accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return Tensor(out, (x,), back)


def linear(x, w, b):
    """``x @ w + b`` for ``x`` of shape ``(B, n_in)``."""

    def back(g):
        x.accumulate(g @ w.data.T)
        w.accumulate(x.data.T @ g)
        b.accumulate(g.sum(axis=0))

    return Tensor(x.data @ w.data + b.data, (x, w, b), back)


def channel_bias(x, bias):
    """Add a per-sample, per-channel bias ``(B, C)`` to an image ``(B, H, W, C)``."""

    def back(g):
        x.accumulate(g)
        bias.accumulate(g.sum(axis=(1, 2)))

    return Tensor(x.data + bias.data[:, None, None, :], (x, bias), back)


def conv2d(x, w, b):
    """'Same' convolution with zero padding; ``w`` has shape ``(kh, kw, C_in, C_out)``.

    The padded batch is flattened to rows of channels so that every kernel
    tap is one contiguous row-slice matmul; outputs are computed on the
    padded width and the junk columns dropped.
    """
    B, H, W, C = x.shape
    kh, kw, cin, cout = w.shape
    if cin != C:
        raise ValueError(f"conv expects {cin} input channels, got {C}")
    ph, pw = kh // 2, kw // 2
    Hp, Wp = H + 2 * ph, W + 2 * pw
    X = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))).reshape(-1, C)
    n_rows = X.shape[0]
    m = n_rows - (kh - 1) * Wp - (kw - 1)
    offsets = [(i, j, i * Wp + j) for i in range(kh) for j in range(kw)]
    full = np.zeros((n_rows, cout))
    acc = full[:m]
    for i, j, off in offsets:
        acc += X[off:off + m] @ w.data[i, j]
    out = full.reshape(B, Hp, Wp, cout)[:, :H, :W, :] + b.data

    def back(g):
        b.accumulate(g.sum(axis=(0, 1, 2)))
        gf = np.zeros((n_rows, cout))
        gf.reshape(B, Hp, Wp, cout)[:, :H, :W, :] = g
        gm = gf[:m]
        if w.requires_grad:
            dw = np.empty(w.shape)
            for i, j, off in offsets:
                dw[i, j] = X[off:off + m].T @ gm
            w.accumulate(dw)
        if x.requires_grad:
            dX = np.zeros((n_rows, C))
            for i, j, off in offsets:
                dX[off:off + m] += gm @ w.data[i, j].T
            x.accumulate(dX.reshape(B, Hp, Wp, C)[:, ph:ph + H, pw:pw + W, :])

    return Tensor(out, (x, w, b), back)


def avg_pool2(x):
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 needs even spatial sizes, got {H}x{W}")
    out = x.data.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def back(g):
        x.accumulate(np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    return Tensor(out, (x,), back)


def upsample2(x):
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def back(g):
        B, H, W, C = g.shape
        x.accumulate(g.reshape(B, H // 2, 2, W // 2, 2, C).sum(axis=(2, 4)))

    return Tensor(out, (x,), back)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            t.accumulate(part)

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)
