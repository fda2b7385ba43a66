"""Constraint-preserving projections onto the affine set ``S = {x : A x = p}``.

Fields are numpy arrays whose trailing dimensions are the per-sample shape
``(C, H, W)``; any leading dimensions are treated as a batch.

Three constraint kinds are supported:

* :class:`DivergenceFree` -- state channels come in interleaved ``(u, v)``
  pairs, one pair per frame.  Raw inputs (prior noise, network output) are
  stream functions with one channel per frame.
* :class:`DirichletBC` -- values on an indicator set are prescribed.
* :class:`MassConservation` -- the mean over the spatial axes of every
  (channel, time-slice) is prescribed.

Composition order is divergence-free construction, then mass correction,
then boundary replacement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

DERIVATIVES = ("spectral", "centered")


# ------------------------------------------------------------ derivatives


def _spectral_diff(f: np.ndarray, axis: int, length: float) -> np.ndarray:
    n = f.shape[axis]
    k = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
    if n % 2 == 0:
        k[-1] = 0.0  # Nyquist derivative is not real-representable
    shape = [1] * f.ndim
    shape[axis] = k.size
    return np.fft.irfft(1j * k.reshape(shape) * np.fft.rfft(f, axis=axis), n=n, axis=axis)


def _centered_diff(f: np.ndarray, axis: int, length: float) -> np.ndarray:
    h = length / f.shape[axis]
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)


def diff(f: np.ndarray, axis: int, kind: str = "spectral", length: float = 1.0) -> np.ndarray:
    """Periodic first derivative along ``axis`` (axis -2 is x, axis -1 is y)."""
    if kind == "spectral":
        return _spectral_diff(f, axis, length)
    if kind == "centered":
        return _centered_diff(f, axis, length)
    raise ValueError(f"unknown derivative {kind!r}")


def stream_to_velocity(psi: np.ndarray, kind: str = "spectral", length: float = 1.0) -> np.ndarray:
    """Map stream functions ``(..., F, H, W)`` to velocities ``(..., 2F, H, W)``.

    ``u = D_y psi`` and ``v = -D_x psi``; frame ``f`` lands in channels
    ``2f`` (u) and ``2f + 1`` (v).
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim < 2:
        raise ValueError("stream function needs at least two spatial axes")
    u = diff(psi, -1, kind, length)
    v = -diff(psi, -2, kind, length)
    out = np.stack([u, v], axis=-3)  # (..., F, 2, H, W)
    return out.reshape(*psi.shape[:-3], -1, *psi.shape[-2:]) if psi.ndim >= 3 else out


def stream_to_velocity_adjoint(g: np.ndarray, kind: str = "spectral", length: float = 1.0) -> np.ndarray:
    """Transpose of :func:`stream_to_velocity` (derivatives are skew-symmetric)."""
    g = np.asarray(g, dtype=float)
    pairs = g.reshape(*g.shape[:-3], -1, 2, *g.shape[-2:])
    gu, gv = pairs[..., 0, :, :], pairs[..., 1, :, :]
    return -diff(gu, -1, kind, length) + diff(gv, -2, kind, length)


def velocity_to_stream(vel: np.ndarray, kind: str = "spectral", length: float = 1.0) -> np.ndarray:
    """Zero-mean stream function whose :func:`stream_to_velocity` image is the
    divergence-free part of ``vel`` (spectral derivatives only).

    Solves ``Lap_d psi = D_y u - D_x v`` with the same Nyquist-free symbols
    used by :func:`diff`.
    """
    if kind != "spectral":
        raise ValueError("stream-function inversion is implemented for spectral derivatives only")
    vel = np.asarray(vel, dtype=float)
    pairs = vel.reshape(*vel.shape[:-3], -1, 2, *vel.shape[-2:])
    h, w = vel.shape[-2:]
    kx = 2 * np.pi * np.fft.fftfreq(h, d=length / h)
    ky = 2 * np.pi * np.fft.rfftfreq(w, d=length / w)
    if h % 2 == 0:
        kx[h // 2] = 0.0
    if w % 2 == 0:
        ky[-1] = 0.0
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    u_hat = np.fft.rfft2(pairs[..., 0, :, :])
    v_hat = np.fft.rfft2(pairs[..., 1, :, :])
    lap = -(KX**2 + KY**2)
    rhs = 1j * KY * u_hat - 1j * KX * v_hat
    safe = np.where(lap != 0, lap, 1.0)
    psi_hat = np.where(lap != 0, rhs / safe, 0.0)
    return np.fft.irfft2(psi_hat, s=(h, w))


def divergence(vel: np.ndarray, kind: str = "spectral", length: float = 1.0) -> np.ndarray:
    """Divergence ``D_x u + D_y v`` of interleaved velocity pairs, shape ``(..., F, H, W)``."""
    vel = np.asarray(vel, dtype=float)
    if vel.shape[-3] % 2:
        raise ValueError(f"divergence needs an even channel count, got {vel.shape[-3]}")
    pairs = vel.reshape(*vel.shape[:-3], -1, 2, *vel.shape[-2:])
    return diff(pairs[..., 0, :, :], -2, kind, length) + diff(pairs[..., 1, :, :], -1, kind, length)


# ------------------------------------------------------------ constraints


@dataclass(frozen=True, eq=False)
class DivergenceFree:
    derivative: str = "spectral"
    length: float = 1.0
    # stencil used when measuring the residual; a mismatched value is a test hook
    check_derivative: Optional[str] = None

    name = "div"

    @property
    def residual_derivative(self) -> str:
        return self.check_derivative or self.derivative


@dataclass(frozen=True, eq=False)
class DirichletBC:
    indicator: np.ndarray
    values: np.ndarray

    name = "bc"

    def __post_init__(self):
        ind = np.asarray(self.indicator)
        if ind.dtype != bool and not np.all((ind == 0) | (ind == 1)):
            raise ValueError("boundary indicator must be binary")
        vals = np.broadcast_to(np.asarray(self.values, dtype=float), ind.shape)
        if not np.all(np.isfinite(vals[ind.astype(bool)])):
            raise ValueError("boundary values must be finite on the indicator set")
        object.__setattr__(self, "indicator", ind.astype(bool))
        object.__setattr__(self, "values", np.where(ind.astype(bool), vals, 0.0))


@dataclass(frozen=True, eq=False)
class MassConservation:
    """Fixed total mass ``m0`` on a domain of measure ``volume`` per slice.

    ``m0`` broadcasts against the per-sample shape with the ``axes`` removed,
    e.g. ``(C, N_t)`` for a ``(C, N_t, N_x)`` trajectory.
    """

    m0: np.ndarray | float = 0.0
    axes: tuple = (-1,)
    volume: float = 1.0

    name = "mass"

    def __post_init__(self):
        axes = tuple(sorted(int(a) for a in self.axes))
        if not axes or axes != tuple(range(-len(axes), 0)):
            raise ValueError("mass axes must be the trailing spatial axes, e.g. (-1,) or (-2, -1)")
        object.__setattr__(self, "axes", axes)

    def target_mean(self) -> np.ndarray:
        return np.asarray(self.m0, dtype=float) / self.volume

    def _keep(self, x):
        t = self.target_mean()
        return t.reshape(t.shape + (1,) * len(self.axes)) if t.ndim else t


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        kinds = [c.name for c in self.constraints]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each constraint kind may appear at most once")
        if "mass" in kinds and "bc" in kinds:
            log.warning("MassConservation combined with DirichletBC: boundary replacement perturbs the mass")

    def get(self, name):
        for c in self.constraints:
            if c.name == name:
                return c
        return None

    @property
    def divergence_free(self) -> Optional[DivergenceFree]:
        return self.get("div")

    def raw_shape(self, state_shape) -> tuple:
        """Shape of prior noise / raw velocity for a given per-sample state shape."""
        state_shape = tuple(state_shape)
        if self.divergence_free is None:
            return state_shape
        c = state_shape[-3]
        if c % 2:
            raise ValueError("divergence-free fields need interleaved (u, v) channel pairs")
        return (*state_shape[:-3], c // 2, *state_shape[-2:])

    def homogeneous(self) -> "ConstraintSpec":
        """Same operator ``A`` with ``p = 0``: the tangent space of ``S``."""
        out = []
        for c in self.constraints:
            if c.name == "bc":
                out.append(DirichletBC(c.indicator, np.zeros_like(c.values)))
            elif c.name == "mass":
                out.append(MassConservation(np.zeros_like(np.asarray(c.m0, dtype=float)), c.axes, c.volume))
            else:
                out.append(c)
        return ConstraintSpec(tuple(out))

    def standardized(self, shift: np.ndarray, scale: np.ndarray) -> "ConstraintSpec":
        """Constraint data expressed in coordinates ``(x - shift[c]) / scale[c]`` per channel."""
        shift = np.asarray(shift, dtype=float)
        scale = np.asarray(scale, dtype=float)
        out = []
        for c in self.constraints:
            if c.name == "bc":
                vals = (c.values - shift[:, None, None]) / scale[:, None, None]
                out.append(DirichletBC(c.indicator, vals))
            elif c.name == "mass":
                n_extra = 2 - len(c.axes)  # per-sample (C, H, W) dims kept after the channel axis
                sh = shift.reshape(-1, *([1] * n_extra))
                sc = scale.reshape(-1, *([1] * n_extra))
                out.append(MassConservation((c.target_mean() - sh) / sc * c.volume, c.axes, c.volume))
            else:
                pairs = scale.reshape(-1, 2)
                if not np.all(pairs[:, 0] == pairs[:, 1]):
                    raise ValueError("divergence-free channels must share one scale factor")
                out.append(c)
        return ConstraintSpec(tuple(out))


# ------------------------------------------------------------ projections


def _mass_correct(x: np.ndarray, c: MassConservation, homogeneous: bool) -> np.ndarray:
    mean = x.mean(axis=c.axes, keepdims=True)
    out = x - mean
    if not homogeneous:
        out = out + c._keep(x)
    return out


def _apply(x, spec: ConstraintSpec, velocity: bool):
    div = spec.divergence_free
    if div is not None:
        x = stream_to_velocity(x, div.derivative, div.length)
    else:
        x = np.array(x, dtype=float, copy=True)
    mass = spec.get("mass")
    if mass is not None:
        x = _mass_correct(x, mass, homogeneous=velocity)
    bc = spec.get("bc")
    if bc is not None:
        x = np.where(bc.indicator, 0.0 if velocity else bc.values, x)
    return x


def project_prior(noise: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Map raw noise to a feasible state ``x0`` in ``S``."""
    _check_raw(noise, spec)
    return _apply(noise, spec, velocity=False)


def project_state(x: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Idempotent projection of a state-shaped field onto ``S``.

    Divergence-free states are first reduced to their stream function, so
    ``project_state(project_prior(z)) == project_prior(z)``.
    """
    div = spec.divergence_free
    if div is not None:
        x = velocity_to_stream(x, div.derivative, div.length)
    return project_prior(x, spec)


def project_velocity(v_raw: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Map a raw velocity to the tangent space ``{v : A v = 0}``."""
    _check_raw(v_raw, spec)
    return _apply(v_raw, spec, velocity=True)


def project_velocity_adjoint(g: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Transpose of the linear map :func:`project_velocity` (for backpropagation)."""
    g = np.array(g, dtype=float, copy=True)
    bc = spec.get("bc")
    if bc is not None:
        g = np.where(bc.indicator, 0.0, g)
    mass = spec.get("mass")
    if mass is not None:
        g = _mass_correct(g, mass, homogeneous=True)
    div = spec.divergence_free
    if div is not None:
        g = stream_to_velocity_adjoint(g, div.derivative, div.length)
    return g


def _check_raw(x, spec):
    x = np.asarray(x)
    if spec.divergence_free is not None and x.ndim < 3:
        raise ValueError("divergence-free raw fields need shape (..., F, H, W)")
    bc = spec.get("bc")
    if bc is not None and spec.divergence_free is None and x.shape[-bc.indicator.ndim:] != bc.indicator.shape:
        raise ValueError(f"field shape {x.shape} incompatible with boundary indicator {bc.indicator.shape}")


# ------------------------------------------------------------ residuals


@dataclass
class ConstraintResidual:
    values: dict = field(default_factory=dict)

    @property
    def max(self) -> float:
        return max(self.values.values(), default=0.0)

    def __getitem__(self, key):
        return self.values[key]


def constraint_residual(x: np.ndarray, spec: ConstraintSpec) -> ConstraintResidual:
    """Max-norm residual of ``A x - p`` per constraint kind."""
    x = np.asarray(x, dtype=float)
    vals = {}
    for c in spec.constraints:
        if c.name == "div":
            r = divergence(x, c.residual_derivative, c.length)
            vals["div"] = float(np.max(np.abs(r))) if r.size else 0.0
        elif c.name == "bc":
            r = np.abs(x - c.values)[..., c.indicator]
            vals["bc"] = float(np.max(r)) if r.size else 0.0
        elif c.name == "mass":
            r = np.abs(x.mean(axis=c.axes, keepdims=True) - c._keep(x))
            vals["mass"] = float(np.max(r)) if r.size else 0.0
    return ConstraintResidual(vals)


def tangency_residual(v: np.ndarray, spec: ConstraintSpec) -> ConstraintResidual:
    return constraint_residual(v, spec.homogeneous())
