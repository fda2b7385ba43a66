import numpy as np
import pytest

from perflow.net import (
    EMA,
    AdamW,
    LRSchedule,
    NetDescriptor,
    OptimizerState,
    VelocityNet,
    backward,
    optimizer_step,
    time_embedding,
)

DESC = NetDescriptor(state_channels=2, cond_channels=4, out_channels=2)


def inputs(seed, b=2, h=8, w=8, desc=DESC):
    rng = np.random.default_rng(seed)
    return (rng.uniform(size=b), rng.standard_normal((b, desc.state_channels, h, w)),
            rng.standard_normal((b, desc.cond_channels, h, w)))


def random_net(seed=0, desc=None):
    desc = desc or NetDescriptor(2, 4, 2, zero_init_output=False)
    net = VelocityNet.init(desc, seed)
    rng = np.random.default_rng(seed + 100)
    for v in net.params.values():  # nonzero biases exercise every path
        v += 0.1 * rng.standard_normal(v.shape)
    return net


def test_output_shape_and_param_count():
    net = VelocityNet.init(NetDescriptor(4, 8, 2), 0)
    t, x, c = inputs(0, desc=NetDescriptor(4, 8, 2))
    assert net(t, x, c).shape == (2, 2, 8, 8)
    assert net.n_params == VelocityNet.init(NetDescriptor(4, 8, 2), 123).n_params


def test_zero_initialised_output_is_exactly_zero():
    net = VelocityNet.init(DESC, 0)
    assert np.all(net(*inputs(1)) == 0)


def test_forward_deterministic():
    net = random_net()
    t, x, c = inputs(2)
    assert np.array_equal(net(t, x, c), net(t, x, c))
    assert np.array_equal(VelocityNet.init(DESC, 5).params["enc0.conv1.w"],
                          VelocityNet.init(DESC, 5).params["enc0.conv1.w"])


def test_fresh_net_bounded_at_zero_input():
    net = VelocityNet.init(NetDescriptor(2, 4, 2, zero_init_output=False), 0)
    out = net(np.zeros(1), np.zeros((1, 2, 16, 16)), np.zeros((1, 4, 16, 16)))
    assert np.max(np.abs(out)) < 10


def test_forward_rejects_bad_input():
    net = VelocityNet.init(DESC, 0)
    t, x, c = inputs(0)
    with pytest.raises(ValueError):
        net(t, x[:, :1], c)
    with pytest.raises(ValueError):
        net(t, x, c[:1])
    bad = x.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        net(t, bad, c)
    with pytest.raises(RuntimeError):
        net.backward(np.zeros((2, 2, 8, 8)))


def test_zero_upstream_gives_zero_gradients():
    net = random_net()
    grads = backward(net, *inputs(3), np.zeros((2, 2, 8, 8)))
    assert all(np.all(g == 0) for g in grads.values())


def test_gradients_match_central_differences():
    net = random_net(7)
    t, x, c = inputs(4)
    g_up = np.random.default_rng(5).standard_normal((2, 2, 8, 8))

    def objective():
        return float(np.sum(net(t, x, c) * g_up))

    grads = backward(net, t, x, c, g_up)
    rng = np.random.default_rng(6)
    names = sorted(net.params)
    checked = 0
    for _ in range(24):
        name = names[rng.integers(len(names))]
        p = net.params[name]
        idx = tuple(rng.integers(s) for s in p.shape)
        old = p[idx]
        p[idx] = old + 1e-4
        up = objective()
        p[idx] = old - 1e-4
        down = objective()
        p[idx] = old
        fd = (up - down) / 2e-4
        an = grads[name][idx]
        assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-6), (name, idx, fd, an)
        checked += 1
    assert checked >= 20


def test_structural_zero_gradient():
    net = random_net(1)
    t, x, c = inputs(8)
    out = net.forward(t, x, c)
    up = 2 * out
    up[:, 1] = 0.0  # loss ||out[:, 0]||^2 only
    grads = net.backward(up)
    assert np.all(grads["out.w"][..., 1] == 0)
    assert grads["out.b"][1] == 0
    assert np.any(grads["out.w"][..., 0] != 0)


def test_zero_init_output_blocks_inner_gradients():
    net = VelocityNet.init(DESC, 0)
    grads = backward(net, *inputs(9), np.ones((2, 2, 8, 8)))
    assert np.all(grads["enc0.conv1.w"] == 0)
    assert np.any(grads["out.w"] != 0)


def test_time_embedding():
    emb = time_embedding(np.array([0.0, 0.5]), 16)
    assert emb.shape == (2, 16)
    assert np.all(emb[0, :8] == 0) and np.all(emb[0, 8:] == 1)


def test_learning_rate_schedule_default():
    sched = LRSchedule(total_epochs=500)
    assert sched(0) == 0.0
    assert sched(5) == pytest.approx(5e-5)
    assert sched(10) == pytest.approx(1e-4)
    assert sched(500) == pytest.approx(6e-5)
    mids = [sched(e) for e in range(10, 501, 10)]
    assert all(a >= b for a, b in zip(mids, mids[1:]))


def test_zero_gradient_without_decay_is_noop():
    params = {"w": np.arange(6.0).reshape(2, 3)}
    before = params["w"].copy()
    opt = AdamW(params, weight_decay=0.0)
    assert opt.step(params, {"w": np.zeros((2, 3))}, 1e-2)
    assert np.array_equal(params["w"], before)


def test_non_finite_gradient_skips_step():
    params = {"w": np.ones(3)}
    state = OptimizerState.create(params, LRSchedule(1e-2, 1e-3, 0, 10))
    assert not optimizer_step(state, params, {"w": np.array([1.0, np.inf, 0.0])})
    assert state.step_count == 0
    assert np.array_equal(params["w"], np.ones(3))


def test_ema_update_formula():
    params = {"w": np.array([1.0, 2.0])}
    ema = EMA(params, 0.995)
    new = {"w": np.array([3.0, -1.0])}
    ema.update(new)
    np.testing.assert_allclose(ema.params["w"], 0.995 * np.array([1.0, 2.0]) + 0.005 * new["w"], rtol=1e-15)
    with pytest.raises(ValueError):
        EMA(params, 1.0)


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -1.0])}
    AdamW(params, weight_decay=0.0).step(params, {"w": np.array([0.3, -2.0])}, 0.01)
    np.testing.assert_allclose(params["w"], [0.99, -0.99], rtol=1e-6)


def test_training_smoke_loss_halves():
    # regress a fixed target on a fixed toy batch
    desc = NetDescriptor(1, 2, 1)
    net = VelocityNet.init(desc, 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 1, 8, 8))
    c = rng.standard_normal((4, 2, 8, 8))
    t = rng.uniform(size=4)
    target = np.sin(x) + 0.5 * c[:, :1]
    opt = AdamW(net.params, weight_decay=0.0)
    losses = []
    for _ in range(200):
        r = net.forward(t, x, c) - target
        losses.append(float(np.mean(np.sum(r**2, axis=(1, 2, 3)))))
        opt.step(net.params, net.backward(2 * r / len(r)), 3e-3)
    assert losses[-1] < 0.5 * losses[0]
