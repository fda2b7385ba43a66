"""Benchmark problem definitions and dataset generation.

Each sample is stored channel-first as ``(C, H, W)``:

============== ========================= ===================================
kind           channels                  hard constraint
============== ========================= ===================================
poisson        (f, u)                    ``u = 0`` on the boundary
darcy          (a, p)                    ``p = 0`` on the boundary
burgers        (u,) over (N_t, N_x)      zero spatial mass in every time row
navier_stokes  (u_0, v_0, ..., u_T, v_T) divergence-free in every frame
============== ========================= ===================================
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import metrics, solvers
from .grf import GrfSpec, sample_grf
from .projections import (
    ConstraintSpec,
    DirichletBC,
    DivergenceFree,
    MassConservation,
    divergence,
    stream_to_velocity,
)
from .seeding import child_seed

log = logging.getLogger(__name__)

KINDS = ("poisson", "darcy", "burgers", "navier_stokes")

_GRF_DEFAULTS = {
    "poisson": dict(alpha=2.0, tau=3.0, scale=1.0),
    "darcy": dict(alpha=2.0, tau=3.0, scale=1.0),
    "burgers": dict(alpha=2.0, tau=5.0, scale=625.0, zero_mean=True),
    # stream-function GRF; velocity rms is about 0.5
    "navier_stokes": dict(alpha=3.5, tau=7.0, scale=1e4),
}
_K_DEFAULTS = {"poisson": 120, "darcy": 120, "burgers": 5, "navier_stokes": 50}


def strict_fields(cls, d: dict, what: str) -> dict:
    """Reject keys that are not dataclass fields of ``cls``."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown {what} key(s): {', '.join(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class DataConfig:
    kind: str
    n_samples: int = 8
    resolution: int = 0  # 0 -> kind default (32, or 64 for burgers)
    n_t: int = 0  # snapshots (burgers) or frames (navier_stokes); 0 -> default
    nu: float = 0.01
    re: float = 1000.0
    horizon: float = 1.0
    source: float = 1.0
    boundary_multiplier: bool = True
    solver_factor: int = 1  # navier_stokes: solve on a finer grid, then stride
    grf: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown PDE kind {self.kind!r}; expected one of {KINDS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not self.resolution:
            object.__setattr__(self, "resolution", 64 if self.kind == "burgers" else 32)
        if not self.n_t:
            object.__setattr__(self, "n_t", {"burgers": 64, "navier_stokes": 10}.get(self.kind, 1))
        if self.resolution < 8 or self.resolution % 2:
            raise ValueError("resolution must be even and >= 8")
        if self.kind == "burgers" and self.n_t % 2:
            raise ValueError("burgers snapshot count must be even (the network pools by 2)")
        if self.kind in ("burgers", "navier_stokes") and self.n_t < 2:
            raise ValueError("time-dependent problems need n_t >= 2")
        solvers.PdeCase(self.kind, self.nu, self.re, self.horizon, max(self.n_t, 2), self.source)  # validates

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(**strict_fields(cls, d, "data config"))

    def to_dict(self) -> dict:
        return asdict(self)

    def grf_spec(self) -> GrfSpec:
        base = dict(_GRF_DEFAULTS[self.kind])
        extra = strict_fields(GrfSpec, self.grf, "grf")
        extra.pop("shape", None)
        base.update(extra)
        if self.kind == "burgers":
            shape = (self.resolution,)
        elif self.kind == "navier_stokes":
            shape = (self.resolution * self.solver_factor,) * 2
        else:
            shape = (self.resolution, self.resolution)
        spec = GrfSpec(shape=shape, **base)
        spec.validate()
        return spec

    def sample_shape(self) -> tuple:
        n = self.resolution
        if self.kind == "burgers":
            return (1, self.n_t, n)
        if self.kind == "navier_stokes":
            return (2 * self.n_t, n, n)
        return (2, n, n)


@dataclass(frozen=True)
class Problem:
    """Static description of one benchmark: channel semantics, constraint and metric."""

    kind: str
    sample_shape: tuple

    @property
    def n_channels(self) -> int:
        return self.sample_shape[0]

    @property
    def components(self) -> dict:
        c = self.n_channels
        if self.kind == "poisson":
            return {"u": (1,), "f": (0,)}
        if self.kind == "darcy":
            return {"a": (0,), "p": (1,)}
        if self.kind == "burgers":
            return {"u": (0,)}
        return {"u": tuple(range(0, c, 2)), "v": tuple(range(1, c, 2))}

    @property
    def phys_variant(self) -> str:
        return {"poisson": "bc", "darcy": "bc", "burgers": "mass", "navier_stokes": "div"}[self.kind]

    @property
    def mask_mode(self) -> str:
        # burgers observes fixed sensor locations through time
        return "sensors" if self.kind == "burgers" else "points"

    @property
    def default_k(self) -> int:
        return _K_DEFAULTS[self.kind]

    @property
    def channel_frames(self) -> np.ndarray:
        """Index of the observation frame each channel belongs to."""
        c = self.n_channels
        if self.kind == "navier_stokes":
            return np.arange(c) // 2
        return np.zeros(c, dtype=int)

    @property
    def n_frames(self) -> int:
        return int(self.channel_frames.max()) + 1

    def boundary_indicator(self) -> np.ndarray:
        ind = np.zeros(self.sample_shape, dtype=bool)
        b = solvers.Grid2D(*self.sample_shape[1:]).boundary_mask()
        ind[1] = b  # solution channel only
        return ind

    def constraint_spec(self) -> ConstraintSpec:
        if self.kind in ("poisson", "darcy"):
            return ConstraintSpec((DirichletBC(self.boundary_indicator(), 0.0),))
        if self.kind == "burgers":
            return ConstraintSpec((MassConservation(np.zeros((1, self.sample_shape[1])), axes=(-1,)),))
        return ConstraintSpec((DivergenceFree(),))

    def phys_err(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[None]
        if self.kind in ("poisson", "darcy"):
            return metrics.phys_err_bc(x[:, 1], solvers.Grid2D(*self.sample_shape[1:]).boundary_mask())
        if self.kind == "burgers":
            return metrics.phys_err_mass(x[:, 0])
        return metrics.phys_err_div(x)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sample_shape": list(self.sample_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        return cls(d["kind"], tuple(d["sample_shape"]))


def problem_for(cfg: DataConfig) -> Problem:
    return Problem(cfg.kind, cfg.sample_shape())


# ------------------------------------------------------------ generation


def generate_sample(cfg: DataConfig, index: int):
    """One ground-truth sample ``(C, H, W)`` and its solver self-check residual."""
    seed = child_seed(cfg.seed, "grf", index)
    mu = sample_grf(cfg.grf_spec(), seed)
    n = cfg.resolution
    if cfg.kind in ("poisson", "darcy"):
        grid = solvers.Grid2D(n, n)
        if cfg.kind == "poisson":
            u = solvers.solve_poisson(mu, grid)
            resid = float(np.max(np.abs(solvers.discrete_laplacian(u, grid) - mu[1:-1, 1:-1])))
            if cfg.boundary_multiplier:
                u = solvers.apply_boundary_multiplier(u, grid)
            return np.stack([mu, u]), resid
        a = solvers.binarize_coefficient(mu)
        p = solvers.solve_darcy(a, cfg.source, grid)
        r = solvers.darcy_matrix(a, grid) @ p[1:-1, 1:-1].ravel() - cfg.source
        return np.stack([a, p]), float(np.max(np.abs(r)))
    if cfg.kind == "burgers":
        traj = solvers.solve_burgers(mu, cfg.nu, cfg.n_t, cfg.horizon)
        m0 = metrics.phys_err_mass(traj[:1])
        resid = float(np.max(np.abs(traj.mean(axis=-1) - traj[0].mean())))
        if m0 > 1e-24:
            raise solvers.SolverError(f"sample {index}: initial mass {np.sqrt(m0):.3e} is not zero")
        return traj[None], resid
    u0 = stream_to_velocity(mu)
    traj = solvers.solve_ns(u0, cfg.re, cfg.n_t, cfg.horizon)
    if cfg.solver_factor > 1:
        traj = solvers.downsample(traj, cfg.solver_factor)
    traj = traj.reshape(2 * cfg.n_t, n, n)
    return traj, float(np.max(np.abs(divergence(traj))))


_TOLERANCE = {"poisson": 1e-6, "darcy": 1e-6, "burgers": 1e-8, "navier_stokes": 1e-8}


def generate_dataset(cfg: DataConfig, progress: Optional[callable] = None):
    """All samples stacked as ``(N, C, H, W)`` plus per-sample self-check residuals.

    Static-solver residuals are absolute and scale with ``1/h^2``, so their
    tolerance is looser than the mass/divergence ones.
    """
    data = np.empty((cfg.n_samples, *cfg.sample_shape()))
    residuals = np.empty(cfg.n_samples)
    for i in range(cfg.n_samples):
        data[i], residuals[i] = generate_sample(cfg, i)
        if residuals[i] > _TOLERANCE[cfg.kind]:
            raise solvers.SolverError(
                f"sample {i}: solver self-check residual {residuals[i]:.3e} exceeds {_TOLERANCE[cfg.kind]:.0e}"
            )
        if progress:
            progress(i)
    return data, residuals


def solver_metadata(cfg: DataConfig) -> dict:
    meta = {
        "poisson": {"stencil": "5-point", "linear_solver": "sparse LU, CG fallback", "rtol": solvers.LINEAR_RTOL,
                    "boundary_multiplier": cfg.boundary_multiplier},
        "darcy": {"stencil": "5-point flux form, harmonic face averages", "linear_solver": "sparse LU, CG fallback",
                  "rtol": solvers.LINEAR_RTOL, "threshold": {"mu>=0": 12.0, "mu<0": 3.0}},
        "burgers": {"space": "Fourier pseudo-spectral, 2/3 dealiasing", "time": "IMEX RK3/Crank-Nicolson",
                    "cfl": 0.4, "snapshots": "uniform on [0, horizon] including t=0"},
        "navier_stokes": {"space": "Fourier pseudo-spectral vorticity form, 2/3 dealiasing",
                          "time": "IMEX RK3/Crank-Nicolson", "stream_function": "psi = (-Lap)^-1 w",
                          "forcing": "0.1*(sin+cos)(2pi(x1+x2)) on vorticity",
                          "initial_condition": "velocity from stream-function GRF",
                          "derivative": "spectral, Nyquist zeroed"},
    }[cfg.kind]
    meta["desk_scale"] = True
    return meta
