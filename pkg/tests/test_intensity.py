import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soft_tree_hawkes import DecisionTree, Event, HawkesParams, Model, Poisson, hawkes_model, single_region_tree
from soft_tree_hawkes.intensity import (intensities, intensity_at, intensity_param_gradients,
                                        raw_subregion_intensities, softplus, softplus_inv)
from soft_tree_hawkes.tree import scores
from conftest import random_events, random_hawkes


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def k1(mu=0.5, gamma=1.0, G=2.0, nu=10.0):
    return hawkes_model(single_region_tree(), [mu], [gamma], [[G]], nu)


def test_raw_intensity_examples():
    m = random_hawkes(np.random.default_rng(0), 2)
    np.testing.assert_array_equal(raw_subregion_intensities(m, 1.0, []), m.kind.mu)
    t = 3.0
    got = raw_subregion_intensities(k1(), t, [Event(t - math.log(2), 0.0, 0.0)])
    assert got[0] == pytest.approx(1.5, abs=1e-14)
    pois = Model(DecisionTree(1, [[1.0, 0.0]], [0.0]), Poisson(3.0), 1.0)
    np.testing.assert_array_equal(raw_subregion_intensities(pois, 5.0, [Event(4.0, 1.0, 1.0)]), [3.0, 3.0])


def test_mixed_intensity_examples():
    flat = hawkes_model(single_region_tree(), [0.0], [1.0], [[0.0]], 1.0)
    assert intensity_at(flat, 1.0, [0, 0], []) == pytest.approx(math.log(2), abs=1e-15)
    big = hawkes_model(single_region_tree(), [50.0], [1.0], [[0.0]], 1.0)
    assert intensity_at(big, 1.0, [0, 0], []) == pytest.approx(50.0, abs=1e-9)
    # rho = (0.25, 0.75) from a stump with sigma(w.l - b) = 0.25
    stump = DecisionTree(1, [[1.0, 0.0]], [math.log(3.0)])
    m = hawkes_model(stump, [1.0, 3.0], [1.0, 1.0], np.zeros((2, 2)), 1.0)
    np.testing.assert_allclose(scores(stump, [0.0, 0.0]), [0.25, 0.75])
    assert intensity_at(m, 1.0, [0.0, 0.0], []) == pytest.approx(math.log1p(math.exp(2.5)), rel=1e-14)


def test_softplus_inverse():
    y = np.array([1e-6, 0.3, 2.0, 40.0])
    np.testing.assert_allclose(softplus(softplus_inv(y)), y, rtol=1e-12)


def test_history_must_precede_query():
    with pytest.raises(ValueError):
        raw_subregion_intensities(k1(), 1.0, [Event(1.0, 0.0, 0.0)])


def test_leaf_count_must_match_tree():
    with pytest.raises(ValueError):
        Model(single_region_tree(), HawkesParams([0.0, 0.0], [0.0, 0.0], np.zeros((2, 2))), 1.0)


def test_mu_gradient_example():
    stump = DecisionTree(1, [[50.0, 0.0]], [0.0])  # rho ~ (1, 0) at x = 1
    m = hawkes_model(stump, [0.7, -0.2], [1.0, 1.0], np.zeros((2, 2)), 1.0)
    g = intensity_param_gradients(m, 1.0, [1.0, 0.0], [])
    assert g["mu"][0] == pytest.approx(sigmoid(0.7), rel=1e-12)
    np.testing.assert_array_equal(g["gamma_raw"], [0.0, 0.0])


def test_gamma_gradient_vanishes_without_excitation():
    m = random_hawkes(np.random.default_rng(1), 2)
    m0 = Model(m.tree, HawkesParams(m.kind.mu, m.kind.gamma_raw, np.zeros((4, 4))), m.nu)
    for hist in ([], [Event(0.5, 1.0, 2.0)]):
        assert np.all(intensity_param_gradients(m0, 1.0, [0.0, 0.0], hist)["gamma_raw"] == 0.0)


def test_interaction_gradient_formula():
    rng = np.random.default_rng(2)
    m = random_hawkes(rng, 1)
    t, l, ev = 2.0, np.array([1.0, -2.0]), Event(1.2, -3.0, 4.0)
    g = intensity_param_gradients(m, t, l, [ev])
    rho_l, rho_j = scores(m.tree, l), scores(m.tree, [ev.x, ev.y])
    z = rho_l @ raw_subregion_intensities(m, t, [ev])
    decay = np.exp(-m.kind.gamma * (t - ev.t))
    expected = sigmoid(z) * rho_j[:, None] * rho_l[None, :] * decay[None, :]
    np.testing.assert_allclose(g["Gamma"], expected, rtol=1e-12)


def numeric_gradient(model, t, l, hist, h=1e-6):
    p = model.params()
    out = {}
    for k, v in p.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            up = {kk: vv.copy() for kk, vv in p.items()}
            dn = {kk: vv.copy() for kk, vv in p.items()}
            up[k][idx] += h
            dn[k][idx] -= h
            g[idx] = (intensity_at(model.with_params(up), t, l, hist)
                      - intensity_at(model.with_params(dn), t, l, hist)) / (2 * h)
        out[k] = g
    return out


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(100):
        depth = [1, 2, 3][i % 3]
        K = 2 ** depth
        tree = DecisionTree(depth, rng.normal(size=(K - 1, 2)), rng.normal(size=K - 1))
        m = Model(tree, HawkesParams(rng.normal(size=K), rng.normal(size=K), rng.normal(size=(K, K))), 2.0)
        n = int(rng.integers(0, 21))
        times, locs = random_events(rng, n, 3.0)
        hist = [Event(t, x, y) for t, (x, y) in zip(times, locs / 10.0)]
        l = rng.normal(size=2)
        g = intensity_param_gradients(m, 3.0, l, hist)
        fd = numeric_gradient(m, 3.0, l, hist)
        for k in g:
            scale = max(np.abs(fd[k]).max(), 1e-3)
            worst = max(worst, float(np.abs(g[k] - fd[k]).max() / scale))
    assert worst < 1e-4


def test_vectorized_matches_pointwise():
    rng = np.random.default_rng(4)
    m = random_hawkes(rng, 2)
    times, locs = random_events(rng, 15, 5.0)
    tq = rng.uniform(0, 6, 10)
    lq = rng.uniform(-10, 10, (10, 2))
    hist = [Event(t, x, y) for t, (x, y) in zip(times, locs)]
    vec = intensities(m, tq, lq, hist)
    for i in range(10):
        before = [e for e in hist if e.t < tq[i]]
        assert vec[i] == pytest.approx(intensity_at(m, tq[i], lq[i], before), rel=1e-12)


floats = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_positivity(seed, t_after):
    rng = np.random.default_rng(seed)
    m = random_hawkes(rng, int(rng.integers(0, 4)))
    times, locs = random_events(rng, 10, 5.0)
    hist = [Event(t, x, y) for t, (x, y) in zip(times, locs)]
    assert intensity_at(m, 5.0 + t_after + 1e-9, rng.uniform(-10, 10, 2), hist) > 0


def nonnegative_model(rng, depth):
    m = random_hawkes(rng, depth)
    return Model(m.tree, HawkesParams(m.kind.mu, m.kind.gamma_raw, np.abs(m.kind.Gamma)), m.nu)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_extra_event_never_lowers_raw_intensity(seed):
    rng = np.random.default_rng(seed)
    m = nonnegative_model(rng, 2)
    times, locs = random_events(rng, 8, 4.0)
    hist = [Event(t, x, y) for t, (x, y) in zip(times, locs)]
    extra = Event(float(rng.uniform(2.0, 4.0)), *rng.uniform(-10, 10, 2))
    base = raw_subregion_intensities(m, 4.5, hist)
    more = raw_subregion_intensities(m, 4.5, hist + [extra])
    assert np.all(more >= base - 1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_excitation_decays(seed, a, b):
    rng = np.random.default_rng(seed)
    m = nonnegative_model(rng, 2)
    times, locs = random_events(rng, 8, 4.0)
    hist = [Event(t, x, y) for t, (x, y) in zip(times, locs)]
    s1, s2 = 4.0 + 1e-6 + min(a, b), 4.0 + 1e-6 + max(a, b)
    e1 = raw_subregion_intensities(m, s1, hist) - m.kind.mu
    e2 = raw_subregion_intensities(m, s2, hist) - m.kind.mu
    assert np.all(e2 <= e1 + 1e-12)


def test_truncation_is_negligible_for_long_windows():
    rng = np.random.default_rng(9)
    m = random_hawkes(rng, 2)
    nu = 40.0 / m.kind.gamma.min()
    m = Model(m.tree, m.kind, nu)
    wide = Model(m.tree, m.kind, 10 * nu)
    hist = [Event(float(t), *rng.uniform(-10, 10, 2)) for t in np.linspace(0, 5 * nu, 60)]
    t = 5 * nu + 1.0
    a, b = intensity_at(m, t, [1.0, 1.0], hist), intensity_at(wide, t, [1.0, 1.0], hist)
    assert abs(a - b) / b < 1e-12
