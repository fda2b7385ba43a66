import numpy as np
import pytest

from perflow.flow import Normalizer, broadcast_mask, sample_mask
from perflow.invariants import StubNet
from perflow.net import NetDescriptor, VelocityNet
from perflow.priors import GMM_STD, physics_prior, sample_base_prior
from perflow.problems import Problem
from perflow.projections import ConstraintSpec, DivergenceFree, MassConservation, constraint_residual
from perflow.sampler import SamplerConfig, SamplingError, integrate, reconstruct


class Const:
    def __init__(self, v):
        self.v = v

    def __call__(self, t, x, c):
        return np.broadcast_to(self.v, x.shape).copy()


EMPTY = ConstraintSpec(())


@pytest.mark.parametrize("steps", [1, 7, 50])
@pytest.mark.parametrize("integrator", ["euler", "heun"])
def test_zero_velocity_keeps_x0(steps, integrator):
    x0 = np.random.default_rng(0).standard_normal((2, 8, 8))
    run = integrate(Const(0.0), x0, np.zeros((4, 8, 8)), SamplerConfig(steps=steps, integrator=integrator), EMPTY)
    assert np.array_equal(run.x_hat, x0)
    assert len(run.residuals) == steps + 1


@pytest.mark.parametrize("steps", [1, 4, 50])
def test_constant_velocity_telescopes(steps):
    x0 = np.zeros((1, 4, 4))
    v = np.full((1, 4, 4), 0.75)  # exactly representable step sums for powers of two
    run = integrate(Const(v), x0, np.zeros((2, 4, 4)), SamplerConfig(steps=steps), EMPTY)
    np.testing.assert_allclose(run.x_hat, x0 + v, rtol=0, atol=1e-14)


def test_trajectory_recording_and_residual_table():
    x0 = np.random.default_rng(1).standard_normal((1, 8, 8))
    spec = ConstraintSpec((MassConservation(0.0, axes=(-1,)),))
    x0 = physics_prior(x0.shape, spec, seed=1)
    run = integrate(Const(1.0), x0, np.zeros((2, 8, 8)), SamplerConfig(steps=5, record_trajectory=True), spec)
    assert len(run.states) == 6
    header, rows = run.residual_table()
    assert header == ["step", "mass", "max"] and len(rows) == 6
    assert max(r[-1] for r in rows) < 1e-12


def test_projection_keeps_trajectory_on_the_set():
    spec = ConstraintSpec((DivergenceFree(),))
    shape = (4, 16, 16)
    net = StubNet(spec.raw_shape(shape), 3)
    x0 = physics_prior(shape, spec, seed=2)
    run = integrate(net, x0[None], np.zeros((1, 0, 16, 16)), SamplerConfig(steps=20, integrator="heun"), spec)
    assert max(r.max for r in run.residuals) < 1e-8


def test_unprojected_random_velocity_leaves_the_set():
    spec = ConstraintSpec((DivergenceFree(),))
    rng = np.random.default_rng(4)
    x0 = physics_prior((2, 16, 16), spec, seed=3)
    run = integrate(Const(rng.standard_normal((2, 16, 16))), x0, np.zeros((4, 16, 16)),
                    SamplerConfig(steps=5, projection=False), spec)
    assert run.residuals[-1].max > 1e-4


def test_stream_net_without_projection_is_rejected():
    with pytest.raises(SamplingError):
        integrate(lambda t, x, c: np.zeros((len(x), 1, 8, 8)), np.zeros((2, 8, 8)), np.zeros((4, 8, 8)),
                  SamplerConfig(steps=2, projection=False), ConstraintSpec((DivergenceFree(),)))


def test_non_finite_state_raises():
    with pytest.raises(SamplingError):
        integrate(Const(np.inf), np.zeros((1, 4, 4)), np.zeros((2, 4, 4)), SamplerConfig(steps=2), EMPTY)


def test_residuals_measured_in_physical_units():
    spec = ConstraintSpec((MassConservation(np.full((1, 4), 2.0), axes=(-1,)),))
    norm = Normalizer(np.array([0.5]), np.array([0.5]))
    x0 = physics_prior((1, 4, 8), norm.spec(spec), seed=0)
    run = integrate(Const(0.0), x0, np.zeros((2, 4, 8)), SamplerConfig(steps=1), spec, norm)
    assert run.residuals[0].max < 1e-14  # physical mean is 2
    assert constraint_residual(x0, spec).max > 0.5  # standardized mean is 3


def small_problem():
    problem = Problem("poisson", (2, 8, 8))
    net = VelocityNet.init(NetDescriptor(2, 4, 2, zero_init_output=False), 0)
    x = np.random.default_rng(0).standard_normal((2, 8, 8))
    x[1][problem.boundary_indicator()[1]] = 0
    mask = broadcast_mask(sample_mask((8, 8), 10, 0), problem.channel_frames)
    return problem, net, np.where(mask, x, 0), mask


def test_reconstruct_single_member_has_zero_std():
    problem, net, y, mask = small_problem()
    rec = reconstruct(net, y, mask, SamplerConfig(steps=3, ensemble=1), problem.constraint_spec(), seed=1)
    assert np.array_equal(rec.mean, rec.samples[0])
    assert np.all(rec.std == 0)
    assert constraint_residual(rec.mean, problem.constraint_spec()).max < 1e-12


def test_reconstruct_deterministic_and_batch_independent():
    problem, net, y, mask = small_problem()
    cfg = SamplerConfig(steps=4, ensemble=3)
    a = reconstruct(net, y, mask, cfg, problem.constraint_spec(), seed=5)
    b = reconstruct(net, y, mask, cfg, problem.constraint_spec(), seed=5)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    two = reconstruct(net, y, mask, SamplerConfig(steps=4, ensemble=2), problem.constraint_spec(), seed=5)
    np.testing.assert_allclose(two.samples, a.samples[:2], rtol=0, atol=1e-13)
    assert np.all(a.std[~problem.boundary_indicator()] > 0)


def test_reconstruct_accepts_frame_masks():
    problem, net, y, mask = small_problem()
    frames = mask[:1]
    cfg = SamplerConfig(steps=2)
    a = reconstruct(net, y, frames, cfg, problem.constraint_spec(), seed=0, channel_frames=problem.channel_frames)
    b = reconstruct(net, y, mask, cfg, problem.constraint_spec(), seed=0)
    assert np.array_equal(a.mean, b.mean)
    with pytest.raises(ValueError):
        reconstruct(net, y, frames, cfg, problem.constraint_spec())


def test_gaussian_prior_variance():
    z = sample_base_prior((100_000,), "gaussian", 0)
    assert abs(z.var() - 1) < 0.05


def test_uniform_prior_bounds_and_variance():
    z = sample_base_prior((100_000,), "uniform", 1)
    assert z.min() >= -np.sqrt(3) and z.max() <= np.sqrt(3)
    assert abs(z.var() - 1) < 0.05


def test_gmm_prior_moments():
    z = sample_base_prior((100_000,), "gmm", 2)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - (1 + GMM_STD**2)) < 0.05


def test_prior_determinism_and_errors():
    assert np.array_equal(sample_base_prior((5, 5), "gmm", 3), sample_base_prior((5, 5), "gmm", 3))
    assert not np.array_equal(sample_base_prior((5, 5), "gmm", 3), sample_base_prior((5, 5), "gmm", 4))
    with pytest.raises(ValueError):
        sample_base_prior((3,), "cauchy", 0)


def test_divergence_free_prior_has_unit_velocity_variance():
    spec = ConstraintSpec((DivergenceFree(),))
    x = np.stack([physics_prior((2, 32, 32), spec, seed=s) for s in range(200)])
    assert abs(x.var() - 1) < 0.05
    assert constraint_residual(x, spec).max < 1e-10
