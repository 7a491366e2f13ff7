import io
import math
from dataclasses import replace

import numpy as np
import pytest

from uavho import dqn, nn
from uavho.dqn import ReplayBuffer, TrainConfig, Transition
from uavho.env import N_FEATURES, Scenario
from uavho.errors import InvalidArgument


def _t(k, terminal=False):
    return Transition(np.full(N_FEATURES, float(k)), k % 4, float(k), np.full(N_FEATURES, k + 1.0),
                      terminal)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, seed=0)
    for k in range(5):
        buf.push(_t(k))
    assert len(buf) == 3
    assert [t.reward for t in buf.transitions()] == [2.0, 3.0, 4.0]


def test_replay_sample_without_replacement():
    buf = ReplayBuffer(10, seed=1)
    for k in range(10):
        buf.push(_t(k))
    b = buf.sample(10)
    assert sorted(b.rewards.tolist()) == [float(k) for k in range(10)]
    with pytest.raises(InvalidArgument):
        buf.sample(11)


def test_replay_sampling_deterministic():
    a, b = ReplayBuffer(50, seed=9), ReplayBuffer(50, seed=9)
    for k in range(40):
        a.push(_t(k))
        b.push(_t(k))
    assert np.array_equal(a.sample(8).rewards, b.sample(8).rewards)


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_epsilon_greedy_distribution(eps):
    rng = np.random.default_rng(42)
    q = np.array([0.1, 0.9, -0.3, 0.2])
    n = 100_000
    counts = np.bincount([dqn.epsilon_greedy(q, eps, rng) for _ in range(n)], minlength=4)
    expected = dqn.action_probabilities(q, eps)
    assert expected[1] == pytest.approx(1 - eps)
    assert np.all(np.abs(counts / n - expected) < 0.01)


def test_epsilon_greedy_zero_is_argmax():
    rng = np.random.default_rng(0)
    assert all(dqn.epsilon_greedy([0, 3, 1, 2], 0.0, rng) == 1 for _ in range(100))
    with pytest.raises(InvalidArgument):
        dqn.epsilon_greedy([0, 1], 1.5, rng)


def test_bellman_target_golden():
    target = nn.Mlp([N_FEATURES, 4], [np.zeros((4, N_FEATURES))], [np.array([0, 2.0, 1, -1])])
    t = Transition(np.zeros(N_FEATURES), 0, 1.0, np.zeros(N_FEATURES), False)
    assert dqn.bellman_target(t, target, 0.9) == pytest.approx(2.8)
    assert dqn.bellman_target(replace(t, terminal=True), target, 0.9) == 1.0


def test_train_batch_single_transition_loss():
    rng = np.random.default_rng(0)
    main = nn.Mlp([N_FEATURES, 8, 4], seed=1)
    target = nn.Mlp([N_FEATURES, 8, 4], seed=2)
    s, s2 = rng.normal(size=N_FEATURES), rng.normal(size=N_FEATURES)
    t = Transition(s, 2, 0.7, s2, False)
    delta = main(s)[2] - (0.7 + 0.95 * target(s2).max())
    loss = dqn.train_batch(main, target, [t], 0.95, 0.0)
    assert loss == pytest.approx(delta ** 2, rel=1e-12)


def test_train_batch_gradient_matches_finite_difference():
    """The SGD step equals -alpha times the numeric gradient of the TD loss."""
    rng = np.random.default_rng(5)
    main = nn.Mlp([N_FEATURES, 6, 4], seed=3)
    target = nn.Mlp([N_FEATURES, 6, 4], seed=4)
    batch = dqn.as_batch([Transition(rng.normal(size=N_FEATURES), int(rng.integers(4)),
                                     float(rng.normal()), rng.normal(size=N_FEATURES),
                                     bool(k == 2)) for k in range(5)])
    before = main.copy()
    alpha = 1e-3
    dqn.train_batch(main, target, batch, 0.9, alpha)
    p = before.weights[0]
    eps = 1e-6
    i, j = 2, 5
    p[i, j] += eps
    up = dqn.train_batch(before.copy(), target, batch, 0.9, 0.0)
    p[i, j] -= 2 * eps
    dn = dqn.train_batch(before.copy(), target, batch, 0.9, 0.0)
    p[i, j] += eps
    numeric = (up - dn) / (2 * eps)
    step = main.weights[0][i, j] - before.weights[0][i, j]
    assert step == pytest.approx(-alpha * numeric, rel=1e-5)


def test_train_batch_reduces_loss_on_frozen_batch():
    rng = np.random.default_rng(2)
    main = nn.Mlp([N_FEATURES, 16, 4], seed=0)
    target = main.copy()
    batch = dqn.as_batch([Transition(rng.uniform(size=N_FEATURES), int(rng.integers(4)),
                                     float(rng.uniform()), rng.uniform(size=N_FEATURES), True)
                          for _ in range(32)])
    first = dqn.train_batch(main, target, batch, 0.95, 1e-4)
    second = dqn.train_batch(main, target, batch, 0.95, 1e-4)
    assert second < first
    for _ in range(100):
        last = dqn.train_batch(main, target, batch, 0.95, 1e-2)
    assert last < first


def test_schedules():
    assert dqn.learning_rate(1e-3, 0.1, 10) == pytest.approx(5e-4)
    cfg = TrainConfig(epsilon_decay=0.99, epsilon_start=1.0, epsilon_end=0.01)
    assert dqn.epsilon_schedule(cfg, 100) == pytest.approx(0.99 ** 100)
    assert dqn.epsilon_schedule(cfg, 100) == pytest.approx(0.366, abs=1e-3)
    assert dqn.epsilon_schedule(cfg, 10_000) == 0.01
    with pytest.raises(InvalidArgument):
        dqn.learning_rate(1e-3, 0.1, -1)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(gamma=1.0)
    with pytest.raises(InvalidArgument):
        TrainConfig(batch_size=64, buffer_capacity=10)
    with pytest.raises(InvalidArgument):
        TrainConfig(epsilon_end=2.0)


def _short():
    return replace(Scenario(), episode_steps=30)


def test_train_short_run_deterministic(tmp_path):
    cfg = TrainConfig(episodes=6, batch_size=16, buffer_capacity=500, target_update_every=20,
                      hidden=(16,), seed=3)
    a = dqn.train(_short(), cfg)
    b = dqn.train(_short(), cfg)
    assert a.gradient_steps == b.gradient_steps == 6 * 30 - 15
    for p, q in zip(a.model.params(), b.model.params()):
        assert np.array_equal(p, q)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    dqn.save_checkpoint(pa, a.model, a.normalizer, cfg)
    dqn.save_checkpoint(pb, b.model, b.normalizer, cfg)
    assert pa.read_bytes() == pb.read_bytes()
    model, norm, tc = dqn.load_checkpoint(pa)
    assert tc["seed"] == 3 and tc["hidden"] == [16]
    x = np.linspace(0, 1, N_FEATURES)
    assert np.array_equal(model(x), a.model(x))
    assert np.array_equal(norm.lo, a.normalizer.lo)
    c = dqn.train(_short(), replace(cfg, seed=4))
    assert not np.array_equal(c.model.weights[0], a.model.weights[0])


def test_training_log_columns():
    cfg = TrainConfig(episodes=3, batch_size=8, buffer_capacity=100, hidden=(8,))
    res = dqn.train(_short(), cfg)
    assert [e.episode for e in res.log] == [0, 1, 2]
    assert res.log[0].epsilon == 1.0 and res.log[1].epsilon == pytest.approx(0.997)
    buf = io.StringIO()
    dqn.write_training_log(res.log, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(dqn.LOG_COLUMNS)
    assert len(lines) == 4
    assert all(math.isfinite(float(x)) for x in lines[-1].split(","))


def test_target_network_sync_cadence(monkeypatch):
    calls = []
    real = nn.clone_into
    monkeypatch.setattr(nn, "clone_into", lambda s, d: (calls.append(1), real(s, d)))
    cfg = TrainConfig(episodes=2, batch_size=10, buffer_capacity=100, target_update_every=7,
                      hidden=(8,))
    res = dqn.train(_short(), cfg)
    assert len(calls) == res.gradient_steps // 7


def test_load_checkpoint_rejects_version(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"checkpoint_version": 42}')
    with pytest.raises(InvalidArgument):
        dqn.load_checkpoint(p)
