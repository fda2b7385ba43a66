"""Structural checks of the projections and of constraint invariance along sampling trajectories."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .grf import GrfSpec, sample_grf
from .priors import physics_prior, raw_prior_noise
from .projections import (
    ConstraintSpec,
    DirichletBC,
    DivergenceFree,
    MassConservation,
    constraint_residual,
    divergence,
    project_prior,
    project_state,
    project_velocity,
    stream_to_velocity,
    tangency_residual,
)
from .sampler import SamplerConfig, integrate
from .seeding import child_seed, make_rng

PRIOR_TOL = 1e-10
TANGENCY_TOL = 1e-10
IDEMPOTENCE_TOL = 1e-12
STENCIL_TOL = 1e-12
TRAJECTORY_TOL = 1e-8
STEP_COUNTS = (1, 5, 50, 200)


@dataclass
class Check:
    name: str
    spec: str
    value: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.threshold)

    def row(self):
        return [self.name, self.spec, f"{self.value:.6e}", f"{self.threshold:.1e}", self.detail,
                "pass" if self.passed else "fail"]

    def to_dict(self):
        return {**asdict(self), "passed": self.passed}


CHECK_HEADER = ["check", "spec", "value", "threshold", "detail", "result"]


def default_specs(seed: int = 0, check_derivative: Optional[str] = None) -> dict:
    """Affine test specs with nonzero data: ``name -> (state_shape, spec)``."""
    rng = make_rng(child_seed(seed, "specs"))
    bc_shape = (2, 32, 32)
    ind = np.zeros(bc_shape, dtype=bool)
    ind[1, 0, :] = ind[1, -1, :] = ind[1, :, 0] = ind[1, :, -1] = True
    bc = DirichletBC(ind, rng.standard_normal(bc_shape))
    mass_shape = (1, 16, 32)
    mass = MassConservation(rng.standard_normal((1, 16)), axes=(-1,))
    div_shape = (6, 32, 32)
    div = DivergenceFree(check_derivative=check_derivative)
    return {
        "bc": (bc_shape, ConstraintSpec((bc,))),
        "mass": (mass_shape, ConstraintSpec((mass,))),
        "div": (div_shape, ConstraintSpec((div,))),
        "div+mass": ((4, 32, 32), ConstraintSpec((DivergenceFree(check_derivative=check_derivative),
                                                  MassConservation(np.zeros(4), axes=(-2, -1))))),
    }


def projection_checks(n_random: int = 100, seed: int = 0, check_derivative: Optional[str] = None) -> list:
    out = []
    for name, (shape, spec) in default_specs(seed, check_derivative).items():
        raw_shape = spec.raw_shape(shape)
        prior_r = tang_r = idem_r = 0.0
        for i in range(n_random):
            rng = make_rng(child_seed(seed, f"proj-{name}", i))
            # stream-function noise is coloured as in sampling; white psi gives O(100) velocities
            noise = raw_prior_noise(raw_shape, spec, "gaussian", child_seed(seed, f"noise-{name}", i))
            noise *= rng.uniform(0.1, 10.0)
            x = project_prior(noise, spec)
            prior_r = max(prior_r, constraint_residual(x, spec).max)
            idem_r = max(idem_r, float(np.max(np.abs(project_state(x, spec) - x))))
            v = project_velocity(rng.standard_normal(raw_shape), spec)
            tang_r = max(tang_r, tangency_residual(v, spec).max)
        out += [
            Check("prior_exactness", name, prior_r, PRIOR_TOL, f"{n_random} inputs"),
            Check("tangency", name, tang_r, TANGENCY_TOL, f"{n_random} inputs"),
            Check("idempotence", name, idem_r, IDEMPOTENCE_TOL, f"{n_random} inputs"),
        ]
    return out


def stencil_check(seed: int = 0, check_derivative: Optional[str] = None) -> Check:
    """Residual divergence of a stream-function velocity under the stencil used for checking."""
    div = DivergenceFree(check_derivative=check_derivative)
    psi = np.stack([sample_grf(GrfSpec((32, 32), alpha=2.0, tau=3.0), child_seed(seed, "stencil", i))
                    for i in range(3)])
    vel = stream_to_velocity(psi, div.derivative, div.length)
    r = float(np.max(np.abs(divergence(vel, div.residual_derivative, div.length))))
    return Check("stencil_compatibility", f"{div.derivative}/{div.residual_derivative}", r, STENCIL_TOL)


class StubNet:
    """A deterministic, state-dependent raw velocity for structural tests."""

    def __init__(self, raw_shape, seed: int):
        rng = make_rng(seed)
        self.a = rng.standard_normal(raw_shape)
        self.b = rng.standard_normal(raw_shape[-3])[:, None, None]

    def __call__(self, t, x, c):
        t = np.asarray(t, dtype=float).reshape(-1, 1, 1, 1)
        drive = np.tanh(x.mean(axis=-3, keepdims=True))
        return self.a * (1.0 + np.sin(3.0 * t)) + self.b * drive


def trajectory_checks(seed: int = 0, step_counts=STEP_COUNTS, integrators=("euler", "heun"),
                      check_derivative: Optional[str] = None) -> list:
    out = []
    for name, (shape, spec) in default_specs(seed, check_derivative).items():
        net = StubNet(spec.raw_shape(shape), child_seed(seed, f"stub-{name}"))
        x0 = physics_prior(shape, spec, "gaussian", child_seed(seed, f"x0-{name}"))[None]
        c = np.zeros((1, 0, *shape[1:]))
        for integ in integrators:
            for n in step_counts:
                run = integrate(net, x0, c, SamplerConfig(steps=n, integrator=integ), spec)
                worst = max(r.max for r in run.residuals)
                out.append(Check("trajectory_stub", name, worst, TRAJECTORY_TOL, f"{integ} N={n}"))
    return out


def trained_trajectory_checks(ckpt, seed: int = 0, step_counts=STEP_COUNTS, k: Optional[int] = None) -> list:
    """Residual trace of the trained EMA network on a synthetic feasible observation."""
    from .flow import Condition, broadcast_mask, sample_mask

    problem = ckpt.problem
    spec = problem.constraint_spec()
    shape = problem.sample_shape
    work = ckpt.normalizer.spec(spec)
    truth = physics_prior(shape, work, "gaussian", child_seed(seed, "truth"))
    kk = problem.default_k if k is None else k
    mask = broadcast_mask(sample_mask(shape[-2:], kk, child_seed(seed, "mask"), problem.n_frames,
                                      problem.mask_mode), problem.channel_frames)
    c = Condition(np.where(mask, truth, 0.0), mask).array()
    x0 = physics_prior(shape, work, "gaussian", child_seed(seed, "x0"))
    out = []
    if ckpt.ema_net.desc.out_channels != spec.raw_shape(shape)[0]:
        return out  # state-shaped outputs cannot drive a stream-function projection
    for n in step_counts:
        run = integrate(ckpt.ema_net, x0, c, SamplerConfig(steps=n), spec, ckpt.normalizer)
        worst = max(r.max for r in run.residuals)
        out.append(Check("trajectory_trained", problem.kind, worst, TRAJECTORY_TOL, f"euler N={n}"))
    return out


def run_all(n_random: int = 100, seed: int = 0, step_counts=STEP_COUNTS, check_derivative: Optional[str] = None,
            ckpt=None) -> list:
    checks = projection_checks(n_random, seed, check_derivative)
    checks.append(stencil_check(seed, check_derivative))
    checks += trajectory_checks(seed, step_counts, check_derivative=check_derivative)
    if ckpt is not None:
        checks += trained_trajectory_checks(ckpt, seed, step_counts)
    return checks
