"""Conditional velocity network ``v(t, x_t, c)``.

A multi-scale convolutional encoder-decoder with skip connections, smooth
SiLU activations, no normalisation layers, and a sinusoidal time embedding
that enters both as a broadcast input channel and as a per-level bias.
Inputs and outputs use the package's channel-first ``(B, C, H, W)`` layout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from ..seeding import make_rng
from . import autodiff as ad


@dataclass(frozen=True)
class NetDescriptor:
    state_channels: int
    cond_channels: int
    out_channels: int
    widths: Tuple[int, ...] = (16, 32)
    time_dim: int = 16
    kernel: int = 3
    zero_init_output: bool = True

    @property
    def in_channels(self) -> int:
        return self.state_channels + self.cond_channels + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetDescriptor":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", (16, 32)))
        return cls(**d)


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = 1000.0 * np.asarray(t, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _param_layout(desc: NetDescriptor):
    """Ordered ``(name, shape, fan_in)`` for every parameter."""
    k = desc.kernel
    emb = 2 * desc.time_dim
    out = [("time.w", (desc.time_dim, emb), desc.time_dim), ("time.b", (emb,), None)]

    def conv(name, cin, cout):
        out.append((f"{name}.w", (k, k, cin, cout), k * k * cin))
        out.append((f"{name}.b", (cout,), None))

    def bias(name, c):
        out.append((f"{name}.w", (emb, c), emb))
        out.append((f"{name}.b", (c,), None))

    cin = desc.in_channels
    for lvl, w in enumerate(desc.widths):
        conv(f"enc{lvl}.conv1", cin, w)
        bias(f"enc{lvl}.temb", w)
        conv(f"enc{lvl}.conv2", w, w)
        cin = w
    for lvl in reversed(range(len(desc.widths) - 1)):
        w = desc.widths[lvl]
        conv(f"dec{lvl}.conv1", cin + w, w)
        bias(f"dec{lvl}.temb", w)
        conv(f"dec{lvl}.conv2", w, w)
        cin = w
    conv("out", cin, desc.out_channels)
    return out


class VelocityNet:
    """Parameters plus forward/backward for the conditional velocity model."""

    def __init__(self, desc: NetDescriptor, params: Dict[str, np.ndarray]):
        self.desc = desc
        self.params = params
        self._record = None

    @classmethod
    def init(cls, desc: NetDescriptor, seed: int) -> "VelocityNet":
        rng = make_rng(seed)
        params = {}
        for name, shape, fan_in in _param_layout(desc):
            if fan_in is None or (name.startswith("out.") and desc.zero_init_output):
                params[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(desc, params)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "VelocityNet":
        return VelocityNet(self.desc, {k: v.copy() for k, v in self.params.items()})

    def _check(self, t, x_t, c):
        x_t, c = np.asarray(x_t, dtype=float), np.asarray(c, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), (x_t.shape[0],))
        if x_t.ndim != 4 or c.ndim != 4:
            raise ValueError("x_t and c must have shape (B, C, H, W)")
        if x_t.shape[1] != self.desc.state_channels or c.shape[1] != self.desc.cond_channels:
            raise ValueError(
                f"expected {self.desc.state_channels} state and {self.desc.cond_channels} condition channels, "
                f"got {x_t.shape[1]} and {c.shape[1]}"
            )
        if x_t.shape[0] != c.shape[0] or x_t.shape[2:] != c.shape[2:]:
            raise ValueError("x_t and c must share batch and spatial shape")
        if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(c)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite network input")
        return t, x_t, c

    def _graph(self, t, x_t, c):
        P = {k: ad.Tensor(v, requires_grad=True) for k, v in self.params.items()}
        B, _, H, W = x_t.shape
        t_chan = np.broadcast_to(t[:, None, None, None], (B, H, W, 1))
        inp = np.concatenate([x_t.transpose(0, 2, 3, 1), c.transpose(0, 2, 3, 1), t_chan], axis=-1)
        h = ad.Tensor(inp)
        emb = ad.Tensor(time_embedding(t, self.desc.time_dim))
        temb = ad.silu(ad.linear(emb, P["time.w"], P["time.b"]))

        def block(h, name):
            h = ad.conv2d(h, P[f"{name}.conv1.w"], P[f"{name}.conv1.b"])
            h = ad.channel_bias(h, ad.linear(temb, P[f"{name}.temb.w"], P[f"{name}.temb.b"]))
            h = ad.silu(h)
            return ad.silu(ad.conv2d(h, P[f"{name}.conv2.w"], P[f"{name}.conv2.b"]))

        skips = []
        n_lvl = len(self.desc.widths)
        for lvl in range(n_lvl):
            if lvl:
                h = ad.avg_pool2(h)
            h = block(h, f"enc{lvl}")
            skips.append(h)
        for lvl in reversed(range(n_lvl - 1)):
            h = ad.concat([ad.upsample2(h), skips[lvl]], axis=-1)
            h = block(h, f"dec{lvl}")
        out = ad.conv2d(h, P["out.w"], P["out.b"])
        return out, P

    def forward(self, t, x_t, c, record: bool = True) -> np.ndarray:
        """Raw velocity ``(B, out_channels, H, W)``; records the graph for :meth:`backward`."""
        t, x_t, c = self._check(t, x_t, c)
        out, P = self._graph(t, x_t, c)
        self._record = (out, P) if record else None
        return out.data.transpose(0, 3, 1, 2).copy()

    def __call__(self, t, x_t, c) -> np.ndarray:
        """Inference only: nothing is kept for a later backward pass."""
        return self.forward(t, x_t, c, record=False)

    def backward(self, upstream: np.ndarray) -> Dict[str, np.ndarray]:
        """Parameter gradients of ``<upstream, forward(...)>`` for the last recorded forward pass."""
        if self._record is None:
            raise RuntimeError("backward() called without a recorded forward pass")
        out, P = self._record
        self._record = None
        g = np.asarray(upstream, dtype=float)
        if g.shape != (out.shape[0], out.shape[3], out.shape[1], out.shape[2]):
            raise ValueError(f"upstream gradient shape {g.shape} does not match the output")
        out.backward(g.transpose(0, 2, 3, 1))
        return {k: (P[k].grad if P[k].grad is not None else np.zeros_like(v)) for k, v in self.params.items()}


def backward(net: VelocityNet, t, x_t, c, upstream) -> Dict[str, np.ndarray]:
    net.forward(t, x_t, c)
    return net.backward(upstream)
