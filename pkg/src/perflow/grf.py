"""Gaussian random fields with covariance ``scale * (-Lap + tau^2 I)^(-alpha)``.

Periodic fields use the discrete Fourier basis on ``[0, 1)^d`` with the
continuous-operator eigenvalues ``(2 pi |k|)^2 + tau^2``.  Dirichlet fields
use the sine basis on the closed grid ``x_i = i / (n - 1)`` with eigenvalues
``pi^2 |j|^2 + tau^2`` and exact zeros on the boundary.

Normalisation: for a periodic sample ``u`` on ``N`` grid points,
``E |fft(u)_k / N|^2 = scale * lambda_k^(-alpha)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from .seeding import make_rng

BOUNDARIES = ("periodic", "dirichlet")


@dataclass(frozen=True)
class GrfSpec:
    shape: Tuple[int, ...]
    alpha: float = 2.0
    tau: float = 3.0
    scale: float = 1.0
    boundary: str = "periodic"
    # Drops the k = 0 mode (periodic only).  Used for zero-mass initial data.
    zero_mean: bool = False

    def validate(self) -> None:
        d = len(self.shape)
        if d < 1:
            raise ValueError("GRF shape must have at least one axis")
        if any(int(n) < 4 for n in self.shape):
            raise ValueError(f"all GRF shape entries must be >= 4, got {self.shape}")
        if not self.alpha > d / 2:
            raise ValueError(f"alpha must exceed d/2 = {d / 2} for a finite-variance field, got {self.alpha}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["shape"] = list(self.shape)
        out["eigenvalues"] = "continuous"
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GrfSpec":
        d = {k: v for k, v in d.items() if k != "eigenvalues"}
        d["shape"] = tuple(d["shape"])
        return cls(**d)


def wavenumbers(shape) -> list:
    """Integer Fourier wavenumbers per axis, broadcastable to ``shape``."""
    d = len(shape)
    out = []
    for ax, n in enumerate(shape):
        k = np.fft.fftfreq(n, d=1.0 / n)
        view = [1] * d
        view[ax] = n
        out.append(k.reshape(view))
    return out


def periodic_eigenvalues(shape, tau: float) -> np.ndarray:
    ks = wavenumbers(shape)
    k2 = sum(k**2 for k in ks)
    return (2 * np.pi) ** 2 * k2 + tau**2


def periodic_sqrt_covariance(spec: GrfSpec) -> np.ndarray:
    """Per-mode multiplier applied to the FFT of unit white noise."""
    lam = periodic_eigenvalues(spec.shape, spec.tau)
    n_total = int(np.prod(spec.shape))
    with np.errstate(divide="ignore"):
        amp = np.sqrt(n_total * spec.scale) * lam ** (-spec.alpha / 2)
    zero = (0,) * len(spec.shape)
    if spec.tau == 0 or spec.zero_mean:
        amp[zero] = 0.0
    return amp


def _sample_periodic(spec: GrfSpec, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(spec.shape)
    coeff = np.fft.fftn(white) * periodic_sqrt_covariance(spec)
    field = np.fft.ifftn(coeff)
    resid = np.max(np.abs(field.imag)) if field.size else 0.0
    if resid > 1e-10 * max(1.0, float(np.max(np.abs(field.real)))):
        raise FloatingPointError(f"GRF inverse transform left an imaginary residue of {resid:.3e}")
    return np.ascontiguousarray(field.real)


def _sample_dirichlet(spec: GrfSpec, rng: np.random.Generator) -> np.ndarray:
    interior = tuple(n - 2 for n in spec.shape)
    xi = rng.standard_normal(interior)
    modes = [np.arange(1, m + 1) for m in interior]
    grids = np.meshgrid(*modes, indexing="ij")
    lam = np.pi**2 * sum(g.astype(float) ** 2 for g in grids) + spec.tau**2
    coeff = np.sqrt(spec.scale) * lam ** (-spec.alpha / 2) * xi
    field = coeff
    # synthesis along each axis with the orthonormal basis sqrt(2) sin(pi j x)
    for ax, n in enumerate(spec.shape):
        x = np.arange(n) / (n - 1)
        basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(x, modes[ax]))
        field = np.moveaxis(np.tensordot(basis, np.moveaxis(field, ax, 0), axes=(1, 0)), 0, ax)
    for ax in range(len(spec.shape)):
        idx = [slice(None)] * len(spec.shape)
        idx[ax] = 0
        field[tuple(idx)] = 0.0
        idx[ax] = -1
        field[tuple(idx)] = 0.0
    return field


def sample_grf(spec: GrfSpec, seed: int) -> np.ndarray:
    """Draw one field.  Identical ``(spec, seed)`` give bit-identical output."""
    spec.validate()
    rng = make_rng(seed)
    if spec.boundary == "periodic":
        return _sample_periodic(spec, rng)
    return _sample_dirichlet(spec, rng)
