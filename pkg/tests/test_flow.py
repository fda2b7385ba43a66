from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perflow.flow import (
    Condition,
    MaskConfig,
    Normalizer,
    TrainConfig,
    broadcast_mask,
    descriptor_for,
    loss_and_grad,
    make_condition,
    make_train_sample,
    rf_loss,
    sample_mask,
    train,
    training_spec,
)
from perflow.net import VelocityNet
from perflow.problems import DataConfig, generate_dataset, problem_for
from perflow.problems import Problem
from perflow.projections import constraint_residual, tangency_residual
from perflow.seeding import child_seed


@pytest.fixture(scope="module")
def datasets():
    out = {}
    for kind, extra in [("poisson", {"resolution": 16}), ("burgers", {"resolution": 16, "n_t": 8}),
                        ("navier_stokes", {"resolution": 16, "n_t": 2}), ("darcy", {"resolution": 16})]:
        cfg = DataConfig(kind, n_samples=6, seed=3, **extra)
        out[kind] = (generate_dataset(cfg)[0], problem_for(cfg))
    return out


def standardized(data, problem):
    norm = Normalizer.fit(data, problem.constraint_spec())
    return norm.forward(data), norm.spec(problem.constraint_spec()), norm


# ---------------------------------------------------------------- masks and conditions


def test_mask_counts():
    assert not sample_mask((8, 8), 0, 1).any()
    assert sample_mask((8, 8), 64, 1).all()
    m = sample_mask((64, 64), 200, 2, n_frames=3)
    assert m.shape == (3, 64, 64)
    assert list(m.sum(axis=(1, 2))) == [200, 200, 200]
    assert not np.array_equal(m[0], m[1])


def test_sensor_mask_columns():
    m = sample_mask((10, 16), 5, 3, mode="sensors")[0]
    assert np.all(m.sum(axis=1) == 5)
    cols = m.any(axis=0)
    assert cols.sum() == 5 and np.all(m[:, cols])


def test_mask_errors_and_determinism():
    with pytest.raises(ValueError):
        sample_mask((4, 4), 17, 0)
    with pytest.raises(ValueError):
        sample_mask((4, 4), 5, 0, mode="sensors")
    with pytest.raises(ValueError):
        sample_mask((4, 4), 1, 0, mode="grid")
    assert np.array_equal(sample_mask((16, 16), 30, 9), sample_mask((16, 16), 30, 9))


def test_broadcast_mask_to_channels():
    frames = sample_mask((8, 8), 10, 0, n_frames=2)
    m = broadcast_mask(frames, [0, 0, 1, 1])
    assert m.shape == (4, 8, 8)
    assert np.array_equal(m[1], frames[0]) and np.array_equal(m[2], frames[1])


def test_condition_examples():
    x = np.random.default_rng(0).standard_normal((2, 8, 8))
    mask = broadcast_mask(sample_mask((8, 8), 20, 1), [0, 0])
    c = make_condition(x, mask)
    assert np.array_equal(c.observed[mask], x[mask])
    assert np.all(c.observed[~mask] == 0)
    empty = make_condition(x, np.zeros_like(mask))
    assert np.all(empty.observed == 0)
    arr = c.array()
    assert arr.shape == (4, 8, 8) and np.array_equal(arr[2:], mask.astype(float))
    with pytest.raises(ValueError):
        Condition(np.zeros((2, 8, 8)), np.zeros((1, 8, 8), dtype=bool))
    with pytest.raises(ValueError):
        make_condition(x, mask, -0.1)


def test_condition_noise_level_monte_carlo():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 32, 32)) * 3.0 + 1.0
    mask = sample_mask((32, 32), 100, 4)
    target = 0.05 * x[mask].std()
    resid = np.concatenate([(make_condition(x, mask, 0.05, s).observed - x)[mask] for s in range(200)])
    assert abs(resid.std() / target - 1) < 0.1


def test_mask_config_range():
    cfg = MaskConfig.around(120)
    assert (cfg.k_min, cfg.k_max) == (60, 180)
    rng = np.random.default_rng(0)
    ks = [cfg.draw_k(rng) for _ in range(2000)]
    assert min(ks) == 60 and max(ks) == 180
    assert MaskConfig.around(5, "sensors").k_min == 2


# ---------------------------------------------------------------- training samples


@pytest.mark.parametrize("kind", ["poisson", "burgers", "navier_stokes", "darcy"])
def test_train_sample_contract(datasets, kind):
    data, problem = datasets[kind]
    xs, spec, _ = standardized(data, problem)
    mcfg = TrainConfig().mask_config(problem)
    s = make_train_sample(xs[0], spec, problem, mcfg, seed=11)
    np.testing.assert_array_equal(s.x_t, (1 - s.t) * s.x0 + s.t * s.x1)
    np.testing.assert_array_equal(s.v_star, s.x1 - s.x0)
    assert constraint_residual(s.x0, spec).max < 1e-10
    assert tangency_residual(s.v_star, spec).max < 1e-9
    assert s.condition.observed.shape == xs[0].shape
    again = make_train_sample(xs[0], spec, problem, mcfg, seed=11)
    assert again.t == s.t and np.array_equal(again.x_t, s.x_t)
    assert np.array_equal(again.condition.array(), s.condition.array())


@pytest.mark.parametrize("kind", ["poisson", "burgers", "navier_stokes"])
def test_interpolant_stays_feasible(datasets, kind):
    data, problem = datasets[kind]
    xs, spec, _ = standardized(data, problem)
    s = make_train_sample(xs[1], spec, problem, TrainConfig().mask_config(problem), seed=2)
    assert np.array_equal((1 - 1.0) * s.x0 + 1.0 * s.x1, s.x1)
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert constraint_residual((1 - t) * s.x0 + t * s.x1, spec).max < 1e-9


# ---------------------------------------------------------------- loss


def batch_for(datasets, kind, n=4, projection=True):
    data, problem = datasets[kind]
    norm = Normalizer.fit(data, problem.constraint_spec())
    spec = training_spec(problem, norm, projection)
    xs = norm.forward(data)
    mcfg = TrainConfig().mask_config(problem)
    batch = [make_train_sample(xs[i], spec, problem, mcfg, seed=100 + i) for i in range(n)]
    desc = descriptor_for(problem, spec, TrainConfig(projection=projection))
    return batch, spec, problem, desc


@pytest.mark.parametrize("kind", ["poisson", "navier_stokes"])
def test_zero_init_loss_is_target_energy(datasets, kind):
    batch, spec, _, desc = batch_for(datasets, kind)
    net = VelocityNet.init(desc, 0)
    expected = np.mean([np.sum(s.v_star**2) for s in batch])
    assert rf_loss(net, batch, spec) == pytest.approx(expected, rel=1e-14)


class Oracle:
    """Returns the exact target velocity (raw shape equals state shape)."""

    def __init__(self, batch):
        self.v = np.stack([s.v_star for s in batch])

    def forward(self, t, x, c, record=True):
        return self.v.copy()


def test_exact_velocity_gives_zero_loss(datasets):
    batch, spec, _, _ = batch_for(datasets, "poisson")
    loss, _ = loss_and_grad(Oracle(batch), batch, spec, need_grad=False)
    assert loss < 1e-25


def test_loss_permutation_invariant(datasets):
    batch, spec, _, desc = batch_for(datasets, "burgers", n=5)
    net = VelocityNet.init(replace(desc, zero_init_output=False), 1)
    a = rf_loss(net, batch, spec)
    b = rf_loss(net, batch[::-1], spec)
    assert a == pytest.approx(b, rel=1e-13)


@pytest.mark.parametrize("kind,projection", [("poisson", True), ("burgers", True), ("navier_stokes", True),
                                             ("poisson", False)])
def test_loss_gradient_through_projection(datasets, kind, projection):
    batch, spec, _, desc = batch_for(datasets, kind, n=2, projection=projection)
    net = VelocityNet.init(replace(desc, zero_init_output=False), 4)
    _, grads = loss_and_grad(net, batch, spec, projection)
    rng = np.random.default_rng(0)
    for name in ("out.w", "enc1.conv2.w", "dec0.conv1.b", "time.w"):
        p = net.params[name]
        idx = tuple(rng.integers(s) for s in p.shape)
        old = p[idx]
        p[idx] = old + 1e-4
        up = rf_loss(net, batch, spec, projection)
        p[idx] = old - 1e-4
        down = rf_loss(net, batch, spec, projection)
        p[idx] = old
        fd = (up - down) / 2e-4
        assert abs(fd - grads[name][idx]) <= 1e-3 * max(abs(fd), 1e-6), name


# ---------------------------------------------------------------- training


def test_zero_epochs_returns_initialisation(datasets):
    data, problem = datasets["poisson"]
    cfg = TrainConfig(epochs=0, seed=5)
    res = train(data, problem, cfg)
    spec = training_spec(problem, res.normalizer, True)
    init = VelocityNet.init(descriptor_for(problem, spec, cfg), child_seed(5, "init"))
    assert res.losses == []
    for k, v in init.params.items():
        assert np.array_equal(res.net.params[k], v)
        assert np.array_equal(res.ema_net.params[k], v)


def test_training_deterministic_and_decreasing(datasets):
    data, problem = datasets["burgers"]
    cfg = TrainConfig(epochs=6, batch_size=2, lr_max=3e-3, lr_min=1e-3, warmup_epochs=1, seed=1)
    a = train(data, problem, cfg)
    b = train(data, problem, cfg)
    assert a.losses == b.losses
    for k in a.net.params:
        assert np.array_equal(a.net.params[k], b.net.params[k])
        assert np.array_equal(a.ema_net.params[k], b.ema_net.params[k])
    assert a.losses[-1] < a.losses[0]


def test_train_rejects_bad_data(datasets):
    data, problem = datasets["poisson"]
    with pytest.raises(ValueError):
        train(data[:, :1], problem, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(data[:0], problem, TrainConfig(epochs=1))


def test_ablation_descriptor_shapes(datasets):
    data, problem = datasets["navier_stokes"]
    norm = Normalizer.fit(data, problem.constraint_spec())
    on = descriptor_for(problem, training_spec(problem, norm, True), TrainConfig())
    off = descriptor_for(problem, training_spec(problem, norm, False), TrainConfig(projection=False))
    assert (on.state_channels, on.cond_channels, on.out_channels) == (4, 8, 2)
    assert off.out_channels == 4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_normalizer_round_trip_and_constraint_consistency(seed):
    rng = np.random.default_rng(seed)
    problem = Problem("poisson", (2, 8, 8))
    data = rng.standard_normal((4, 2, 8, 8)) * [[[[2.0]], [[0.5]]]] + 1.0
    data[:, 1][:, problem.boundary_indicator()[1]] = 0.0
    norm = Normalizer.fit(data, problem.constraint_spec())
    assert norm.shift[1] == 0.0
    np.testing.assert_allclose(norm.inverse(norm.forward(data)), data, atol=1e-12)
    z = norm.forward(data[0])
    assert constraint_residual(z, norm.spec(problem.constraint_spec())).max == 0.0
    assert Normalizer.from_dict(norm.to_dict()).to_dict() == norm.to_dict()
