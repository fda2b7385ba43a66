"""Few-step conditional ODE sampling and ensemble reconstruction."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .flow import Condition, Normalizer, broadcast_mask
from .priors import PRIORS, physics_prior, sample_base_prior
from .problems import strict_fields
from .projections import ConstraintSpec, constraint_residual, project_velocity
from .seeding import child_seed

__all__ = ["SamplerConfig", "SampleRun", "integrate", "reconstruct", "sample_base_prior", "draw_initial_state"]

INTEGRATORS = ("euler", "heun")


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    integrator: str = "euler"
    prior: str = "gaussian"
    ensemble: int = 1
    record_trajectory: bool = False
    projection: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.ensemble < 1:
            raise ValueError("ensemble must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(**strict_fields(cls, d, "sampler config"))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SampleRun:
    condition: np.ndarray
    x0: np.ndarray
    x_hat: np.ndarray
    residuals: list  # ConstraintResidual per recorded state, length steps + 1
    states: Optional[list] = None
    wall_time: float = 0.0

    def residual_table(self):
        keys = sorted({k for r in self.residuals for k in r.values})
        return ["step", *keys, "max"], [[i, *(r.values.get(k, 0.0) for k in keys), r.max]
                                        for i, r in enumerate(self.residuals)]


def _physical(x, normalizer):
    return x if normalizer is None else normalizer.inverse(x)


def integrate(net, x0: np.ndarray, c: np.ndarray, cfg: SamplerConfig, spec: ConstraintSpec,
              normalizer: Optional[Normalizer] = None) -> SampleRun:
    """Integrate ``dx/dt = P(v(t, x, c))`` from ``t = 0`` to ``1``.

    ``spec`` holds the constraints in physical units.  States live in the
    normalizer's coordinates; residuals are measured after mapping back.
    ``net`` is any callable ``(t, x, c) -> raw velocity`` on batches.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=float, copy=True)
    c = np.asarray(c, dtype=float)
    single = x.ndim == 3
    if single:
        x, c = x[None], c[None]
    work_spec = spec if normalizer is None else normalizer.spec(spec)

    def velocity(t, state):
        raw = np.asarray(net(np.full(len(state), t), state, c), dtype=float)
        v = project_velocity(raw, work_spec) if cfg.projection else raw
        if v.shape != state.shape:
            raise SamplingError(f"velocity shape {v.shape} does not match state {state.shape}; "
                                "a stream-function network cannot run with projection disabled")
        return v

    residuals = [constraint_residual(_physical(x, normalizer), spec)]
    states = [x.copy()] if cfg.record_trajectory else None
    dt = 1.0 / cfg.steps
    for i in range(cfg.steps):
        t = i * dt
        v = velocity(t, x)
        if cfg.integrator == "euler":
            x = x + dt * v
        else:
            v2 = velocity(t + dt, x + dt * v)
            x = x + 0.5 * dt * (v + v2)
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite state after step {i + 1}")
        residuals.append(constraint_residual(_physical(x, normalizer), spec))
        if states is not None:
            states.append(x.copy())
    if single:
        x, c = x[0], c[0]
        states = None if states is None else [s[0] for s in states]
    return SampleRun(c, np.asarray(x0), x, residuals, states, time.perf_counter() - start)


def draw_initial_state(shape, spec: ConstraintSpec, cfg: SamplerConfig, seed: int) -> np.ndarray:
    """Prior-projected noise when projection is on; plain base noise otherwise."""
    if cfg.projection:
        return physics_prior(shape, spec, cfg.prior, seed)
    return sample_base_prior(shape, cfg.prior, seed)


@dataclass
class Reconstruction:
    samples: np.ndarray  # (K, C, H, W), physical units
    mean: np.ndarray
    std: np.ndarray
    runs: list = field(default_factory=list)


def reconstruct(net, y: np.ndarray, mask: np.ndarray, cfg: SamplerConfig, spec: ConstraintSpec,
                normalizer: Optional[Normalizer] = None, seed: int = 0, channel_frames=None) -> Reconstruction:
    """K-member ensemble for physical observations ``y`` on ``mask``.

    ``mask`` is either per channel ``(C, H, W)`` or per frame, in which case
    ``channel_frames`` maps channels to frames.  Member ``k`` draws its prior
    from ``child_seed(seed, "prior", k)``, so results do not depend on how
    members are batched.
    """
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != y.shape:
        if channel_frames is None:
            raise ValueError(f"mask shape {mask.shape} does not match observations {y.shape}")
        mask = broadcast_mask(mask, channel_frames)
        if mask.shape != y.shape:
            raise ValueError(f"mask shape {mask.shape} does not match observations {y.shape}")
    norm = normalizer or Normalizer.identity(y.shape[0])
    y_std = np.where(mask, norm.forward(y), 0.0)
    c = Condition(y_std, mask).array()
    work_spec = norm.spec(spec)
    x0 = np.stack([draw_initial_state(y.shape, work_spec, cfg, child_seed(seed, "prior", k))
                   for k in range(cfg.ensemble)])
    run = integrate(net, x0, np.broadcast_to(c, (cfg.ensemble, *c.shape)), cfg, spec, norm)
    samples = norm.inverse(run.x_hat)
    runs = [_member(run, k) for k in range(cfg.ensemble)]
    return Reconstruction(samples, samples.mean(axis=0), samples.std(axis=0), runs)


def _member(run: SampleRun, k: int) -> SampleRun:
    """Per-member view of a batched run; residuals are batch maxima."""
    states = None if run.states is None else [s[k] for s in run.states]
    return SampleRun(run.condition[k], run.x0[k], run.x_hat[k], run.residuals, states, run.wall_time)
