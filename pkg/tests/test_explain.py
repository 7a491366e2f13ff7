import itertools
import math

import numpy as np
import pytest

from uavho import explain as X
from uavho import nn
from uavho.errors import InvalidArgument, UnsupportedArchitecture

N = 12


def _random_net(seed, dims=(N, 16, 16, 4)):
    m = nn.Mlp(list(dims), seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for b in m.biases:
        b[:] = rng.normal(0, 0.3, size=b.shape)
    return m


def _linear_net(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return nn.Mlp([len(w), 1], [w[None, :]], [np.array([b])])


def _brute_force_shapley(f, n):
    """Textbook definition over subsets, independent of the bitmask code."""
    psi = np.zeros(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for k in range(n):
            for S in itertools.combinations(others, k):
                w = math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n)
                psi[i] += w * (f(set(S) | {i}) - f(set(S)))
    return psi


def test_shapley_weights_sum():
    for n in (1, 4, 12):
        w = X.shapley_weights(n)
        total = sum(math.comb(n - 1, s) * w[s] for s in range(n))
        assert total == pytest.approx(1.0, abs=1e-15)


def test_value_function_linear_closed_form():
    w = np.array([2.0, -1.0, 0.5])
    m = _linear_net(w, 0.3)
    x = np.array([1.0, 2.0, 3.0])
    b = np.array([[0.5, 0.5, 0.5]])
    assert X.value_function(m, x, b, [0, 2], 0) == pytest.approx(2 * 1 - 0.5 + 0.5 * 3 + 0.3)
    bg = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert X.value_function(m, x, bg, [], 0) == pytest.approx(0.3 + 0.5 * 1.5)
    with pytest.raises(InvalidArgument):
        X.value_function(m, x, bg, [5], 0)


def test_exact_linear_closed_form():
    m = _linear_net([2.0, 3.0])
    a = X.exact_shapley(m, [1.0, 1.0], np.zeros((1, 2)), 0)
    assert np.allclose(a.shapley, [2.0, 3.0], atol=1e-12)


def test_exact_matches_brute_force_on_small_net():
    m = _random_net(3, dims=(5, 8, 3))
    rng = np.random.default_rng(3)
    x = rng.normal(size=5)
    bg = rng.normal(size=(4, 5))
    a = X.exact_shapley(m, x, bg, 1)
    ref = _brute_force_shapley(lambda S: X.value_function(m, x, bg, sorted(S), 1), 5)
    assert np.allclose(a.shapley, ref, atol=1e-12)


def test_exact_axioms_on_random_nets():
    rng = np.random.default_rng(0)
    for seed in range(5):
        m = _random_net(seed)
        x = rng.uniform(size=N)
        bg = rng.uniform(size=(8, N))
        a = X.exact_shapley(m, x, bg, seed % 4)
        assert abs(a.efficiency_gap) < 1e-9
        assert a.base_value == pytest.approx(m(bg)[:, seed % 4].mean(), abs=1e-12)
        assert a.output_value == pytest.approx(m(x)[seed % 4], abs=1e-12)


def test_dummy_feature_zero():
    m = _random_net(11)
    m.weights[0][:, 4] = 0.0
    rng = np.random.default_rng(1)
    a = X.exact_shapley(m, rng.uniform(size=N), rng.uniform(size=(8, N)), 0)
    assert abs(a.shapley[4]) < 1e-9


def test_exact_guard_on_feature_count():
    m = nn.Mlp([21, 2], seed=0)
    with pytest.raises(InvalidArgument):
        X.exact_shapley(m, np.zeros(21), np.zeros((1, 21)), 0)


def test_sampled_efficiency_exact_for_any_n():
    m = _random_net(2)
    rng = np.random.default_rng(2)
    x, bg = rng.uniform(size=N), rng.uniform(size=(8, N))
    for n in (1, 3, 17):
        a = X.sampled_shapley(m, x, bg, 2, n, np.random.default_rng(n))
        assert abs(a.efficiency_gap) < 1e-9
        assert a.method == f"permutation({n})"


def test_sampled_close_to_exact():
    m = _random_net(4)
    rng = np.random.default_rng(4)
    x, bg = rng.uniform(size=N), rng.uniform(size=(8, N))
    ex = X.exact_shapley(m, x, bg, 0).shapley
    sa = X.sampled_shapley(m, x, bg, 0, 2000, np.random.default_rng(0)).shapley
    assert np.max(np.abs(sa - ex)) / np.max(np.abs(ex)) < 0.05


def test_deeplift_linear_equals_exact():
    rng = np.random.default_rng(6)
    w = rng.normal(size=N)
    m = _linear_net(w, 0.7)
    x, bg = rng.normal(size=N), rng.normal(size=(5, N))
    dl = X.deeplift_rescale(m, x, bg, 0)
    ex = X.exact_shapley(m, x, bg, 0)
    assert np.allclose(dl.shapley, w * (x - bg.mean(axis=0)), atol=1e-12)
    assert np.allclose(dl.shapley, ex.shapley, atol=1e-9)


def test_deeplift_summation_to_delta_per_reference():
    rng = np.random.default_rng(7)
    m = _random_net(7)
    for _ in range(20):
        x, r = rng.normal(size=N), rng.normal(size=N)
        c = X.deeplift_contributions(m, x, r, 3)
        assert abs(c.sum() - (m(x)[3] - m(r)[3])) < 1e-6


def test_deeplift_zero_delta_fallback():
    m = _random_net(8)
    x = np.random.default_rng(8).normal(size=N)
    c = X.deeplift_contributions(m, x, x.copy(), 0)
    assert np.all(np.isfinite(c)) and np.allclose(c, 0.0)


def test_deeplift_rejects_unknown_activation():
    m = _random_net(1)
    m.activations[0] = "tanh"
    with pytest.raises(UnsupportedArchitecture):
        X.deeplift_contributions(m, np.zeros(N), np.ones(N), 0)


def test_background_validation():
    with pytest.raises(InvalidArgument):
        X.BackgroundSet(np.zeros((0, N)))
    with pytest.raises(InvalidArgument):
        X.BackgroundSet(np.zeros((2, N)), provenance="made-up")
    assert len(X.BackgroundSet(np.zeros(N))) == 1


def test_explain_dispatch_and_trace():
    m = _random_net(9)
    rng = np.random.default_rng(9)
    states = rng.uniform(size=(3, N))
    bg = X.BackgroundSet(rng.uniform(size=(4, N)))
    out = X.explain_trace(m, states, bg, "deeplift")
    for s, a in zip(states, out):
        assert a.action == int(np.argmax(m(s)))
        assert a.method == "deeplift"
    with pytest.raises(InvalidArgument):
        X.explain(m, states[0], bg, 0, method="lime")


def test_explain_trace_reports_raw_values():
    from uavho.env import Normalizer, Scenario
    norm = Normalizer.for_scenario(Scenario())
    raw = norm.denormalize(np.full(N, 0.5))
    m = _random_net(10)
    a = X.explain_trace(m, [raw], np.full((1, N), 0.4), "exact", normalizer=norm)[0]
    assert np.allclose(a.feature_values, raw)
    assert np.allclose(a.normalized_values, 0.5)
