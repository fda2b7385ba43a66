"""Base distributions and the physics-embedded prior draw."""

from __future__ import annotations

import numpy as np

from .projections import ConstraintSpec, project_prior
from .seeding import make_rng

PRIORS = ("gaussian", "uniform", "gmm")
GMM_MEANS = (-1.0, 1.0)
GMM_STD = 0.5


def _draw(rng: np.random.Generator, shape, kind: str) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "uniform":
        r = np.sqrt(3.0)
        return rng.uniform(-r, r, size=shape)
    if kind == "gmm":
        sign = np.where(rng.random(shape) < 0.5, GMM_MEANS[0], GMM_MEANS[1])
        return sign + GMM_STD * rng.standard_normal(shape)
    raise ValueError(f"unknown prior {kind!r}; expected one of {PRIORS}")


def sample_base_prior(shape, kind: str = "gaussian", seed: int = 0) -> np.ndarray:
    """Entrywise i.i.d. noise: N(0,1), U(-sqrt3, sqrt3) or the mixture 0.5 N(-1, 0.25) + 0.5 N(1, 0.25)."""
    return _draw(make_rng(seed), tuple(shape), kind)


def _stream_filter(h: int, w: int) -> np.ndarray:
    """Spectral filter turning white noise into a stream function whose velocity has unit variance.

    With amplitude ``1/|k|`` the velocity is the Leray projection of white
    noise; the constant rescales for the Nyquist rows removed by the
    derivative.
    """
    kx = 2 * np.pi * np.fft.fftfreq(h, d=1.0 / h)
    ky = 2 * np.pi * np.fft.fftfreq(w, d=1.0 / w)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    k2 = KX**2 + KY**2
    g = np.zeros_like(k2)
    g[k2 > 0] = 1.0 / np.sqrt(k2[k2 > 0])
    dx = KX.copy()
    dy = KY.copy()
    if h % 2 == 0:
        dx[h // 2, :] = 0.0
    if w % 2 == 0:
        dy[:, w // 2] = 0.0
    var = np.mean((dx**2 + dy**2) * g**2) / 2.0  # per velocity component
    return g / np.sqrt(var)


def raw_prior_noise(raw_shape, spec: ConstraintSpec, kind: str = "gaussian", seed: int = 0) -> np.ndarray:
    """Raw noise for :func:`physics_prior`; stream-function noise is spectrally coloured."""
    z = sample_base_prior(raw_shape, kind, seed)
    if spec.divergence_free is None:
        return z
    h, w = raw_shape[-2:]
    return np.fft.ifft2(np.fft.fft2(z, axes=(-2, -1)) * _stream_filter(h, w), axes=(-2, -1)).real


def physics_prior(state_shape, spec: ConstraintSpec, kind: str = "gaussian", seed: int = 0) -> np.ndarray:
    """A feasible initial state ``x0 = project_prior(noise)``."""
    noise = raw_prior_noise(spec.raw_shape(state_shape), spec, kind, seed)
    return project_prior(noise, spec)
