import math

import numpy as np
import pytest
from scipy import integrate

from soft_tree_hawkes import (DecisionTree, EventSequence, GridSpec, Model, Poisson, QuadratureSpec,
                              compensator, expected_count_grid, hawkes_model, predict_next, single_region_tree)
from soft_tree_hawkes.intensity import softplus
from soft_tree_hawkes.quadrature import (CountGrid, actual_count_grid, joint_density, marginal_location_density,
                                         marginal_time_density, spatial_points)
from conftest import BOX, UNIT, random_events, random_hawkes


def poisson(rate=0.3, depth=1):
    tree = DecisionTree(depth, [[0.4, -0.2]] * (2 ** depth - 1), [0.1] * (2 ** depth - 1))
    return Model(tree, Poisson(rate), 2.0)


def empty(region=BOX):
    return EventSequence(np.zeros(0), np.zeros((0, 2)), region, t_start=0.0, t_end=0.0)


def k1_one_event(t_j=0.5, mu=0.2, gamma=1.5, G=3.0, nu=4.0):
    m = hawkes_model(single_region_tree(), [mu], [gamma], [[G]], nu)
    hist = EventSequence([t_j], [[0.3, 0.4]], UNIT, t_start=0.0)
    return m, hist


def k1_raw(t, t_j=0.5, mu=0.2, gamma=1.5, G=3.0, nu=4.0):
    t = np.asarray(t, dtype=float)
    on = (t > t_j) & (t <= t_j + nu)
    return softplus(mu + np.where(on, G * np.exp(-gamma * (t - t_j)), 0.0))


def reference(t0, t1, n=10 ** 6):
    t = np.linspace(t0, t1, n + 1)
    return float(integrate.trapezoid(k1_raw(t), t))  # unit square, so area 1


@pytest.mark.parametrize("n_t", [2, 7, 64])
def test_poisson_compensator_exact(n_t):
    m = poisson()
    q = QuadratureSpec(n_t, 3, 5)
    got = compensator(m, 1.25, 4.0, empty(), q)
    assert got == pytest.approx(softplus(0.3) * 2.75 * 400.0, rel=1e-12)


def test_empty_interval():
    m, h = k1_one_event()
    assert compensator(m, 2.0, 2.0, h, QuadratureSpec()) == 0.0
    with pytest.raises(ValueError):
        compensator(m, 2.0, 1.0, h, QuadratureSpec())


def test_k1_matches_dense_reference():
    m, h = k1_one_event()
    got = compensator(m, 0.0, 6.0, h, QuadratureSpec(64, 2, 2))
    ref = reference(0.0, 6.0)
    assert abs(got - ref) / ref < 1e-4
    exact = integrate.quad(k1_raw, 0.0, 6.0, points=[0.5, 4.5], epsabs=1e-13, limit=200)[0]
    # trapezoid is first order across the two jumps, still far inside the tolerance above
    assert abs(ref - exact) / exact < 1e-6


def test_second_order_convergence():
    m, h = k1_one_event()
    exact = integrate.quad(k1_raw, 0.0, 6.0, points=[0.5, 4.5], epsabs=1e-13, limit=200)[0]
    errs = [abs(compensator(m, 0.0, 6.0, h, QuadratureSpec(n, 2, 2)) - exact) for n in (2, 4, 8, 16, 32)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.9


def test_additivity_on_aligned_grids():
    rng = np.random.default_rng(0)
    m = random_hawkes(rng, 2)
    times, locs = random_events(rng, 20, 6.0)
    seq = EventSequence(times, locs, BOX, t_start=0.0, t_end=6.0)
    q = QuadratureSpec(8, 8, 8)
    whole = compensator(m, 0.0, 6.0, seq, q)
    parts = compensator(m, 0.0, 2.5, seq, q) + compensator(m, 2.5, 6.0, seq, q)
    assert parts == pytest.approx(whole, rel=1e-9)


def test_poisson_densities_closed_form():
    m = poisson()
    q = QuadratureSpec(16, 8, 8, t_max=1.0)
    c = softplus(0.3)
    for dt in (0.0, 0.01, 0.1):
        f = joint_density(m, 2.0 + dt, [1.0, 1.0], 2.0, empty(), q)
        assert f == pytest.approx(c * math.exp(-c * 400 * dt), rel=1e-12)
        g = marginal_time_density(m, 2.0 + dt, 2.0, empty(), q)
        assert g == pytest.approx(400 * c * math.exp(-c * 400 * dt), rel=1e-12)
    loc = marginal_location_density(m, [3.0, -2.0], 2.0, empty(), q)
    assert loc == pytest.approx((1 - math.exp(-c * 400 * q.t_max)) / 400, rel=1e-12)


def test_density_limit_at_last_event():
    m, h = k1_one_event()
    f = joint_density(m, 0.5, [0.2, 0.2], 0.5, h, QuadratureSpec())
    assert f == pytest.approx(float(k1_raw(0.5)), rel=1e-12)


def test_time_marginal_mass_identity():
    m, h = k1_one_event()
    q = QuadratureSpec(256, 2, 2, t_max=3.0)
    total = integrate.quad(lambda t: marginal_time_density(m, t, 0.5, h, q), 0.5, 3.5,
                           epsabs=1e-10, limit=200)[0]
    comp = compensator(m, 0.5, 3.5, h, q)
    assert total == pytest.approx(1 - math.exp(-comp), abs=1e-4)


def test_location_marginal_integrates_to_captured_mass():
    rng = np.random.default_rng(3)
    m = random_hawkes(rng, 1, region=UNIT, nu=2.0)
    times, locs = random_events(rng, 5, 1.0, UNIT)
    seq = EventSequence(times, locs, UNIT, t_start=0.0)
    q = QuadratureSpec(16, 8, 8, t_max=1.5)
    pts, dA = spatial_points(UNIT, 8, 8)
    total = sum(marginal_location_density(m, p, float(times[-1]), seq, q) for p in pts) * dA
    p = predict_next(m, float(times[-1]), seq, q, warn=False)
    assert total == pytest.approx(p.mass, abs=1e-6)


def test_survival_is_monotone():
    rng = np.random.default_rng(5)
    m = random_hawkes(rng, 2)
    times, locs = random_events(rng, 10, 3.0)
    seq = EventSequence(times, locs, BOX, t_start=0.0)
    q = QuadratureSpec(16, 8, 8)
    surv = [math.exp(-compensator(m, 3.0, 3.0 + d, seq, q)) for d in np.linspace(0, 2, 9)]
    assert all(b <= a for a, b in zip(surv, surv[1:]))


@pytest.mark.parametrize("t_max", [0.01, 0.05, 1.0])
def test_poisson_next_event_mean(t_max):
    m = poisson(0.3, depth=2)
    q = QuadratureSpec(8, 8, 8, t_max=t_max)
    r = softplus(0.3) * 400
    expected = 1 / r - t_max * math.exp(-r * t_max) / (-math.expm1(-r * t_max))
    p = predict_next(m, 1.0, empty(), q, warn=False)
    assert p.t - 1.0 == pytest.approx(expected, rel=1e-10)
    assert p.x == pytest.approx(0.0, abs=1e-12) and p.y == pytest.approx(0.0, abs=1e-12)
    assert p.mass == pytest.approx(-math.expm1(-r * t_max), rel=1e-12)


def test_low_mass_warning():
    m = poisson(1e-3)
    with pytest.warns(UserWarning, match="captured mass"):
        predict_next(m, 0.0, empty(), QuadratureSpec(4, 4, 4, t_max=0.01))


def test_poisson_count_grid():
    m = poisson(0.3, depth=2)
    grid = GridSpec(BOX, 4, 5)
    q = QuadratureSpec(8, 8, 8)
    cg = expected_count_grid(m, 1.0, 2.0, empty(), grid, q)
    np.testing.assert_allclose(cg.grid, softplus(0.3) * 2.0 * grid.cell_area, rtol=1e-12)
    cg2 = expected_count_grid(m, 1.0, 4.0, empty(), grid, q)
    np.testing.assert_allclose(cg2.grid, 2 * cg.grid, rtol=1e-12)


def test_count_grid_sums_to_compensator():
    rng = np.random.default_rng(6)
    m = random_hawkes(rng, 2)
    times, locs = random_events(rng, 30, 5.0)
    seq = EventSequence(times, locs, BOX, t_start=0.0, t_end=8.0)
    grid = GridSpec(BOX, 4, 4)
    q = QuadratureSpec(16, 16, 16)
    cg = expected_count_grid(m, 5.0, 3.0, seq, grid, q)
    past = seq.slice(0, len(seq), 0.0, 5.0)
    assert cg.grid.sum() == pytest.approx(compensator(m, 5.0, 8.0, past, q), rel=1e-9)


def test_count_grid_csv_roundtrip(tmp_path):
    grid = GridSpec(BOX, 2, 3)
    cg = CountGrid(np.arange(6.0).reshape(2, 3) / 7, grid, (0.0, 1.0))
    cg.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x_index,y_index,count" and lines[1].startswith("0,0,")
    np.testing.assert_array_equal(CountGrid.read_csv(tmp_path / "c.csv", grid).grid, cg.grid)


def test_actual_counts():
    seq = EventSequence([0.5, 1.0, 1.5, 3.0], [[-5, -5], [5, 5], [5, 5], [5, 5]], BOX, t_start=0.0)
    cg = actual_count_grid(seq, 0.0, 2.0, GridSpec(BOX, 2, 2))
    np.testing.assert_array_equal(cg.grid, [[1, 0], [0, 2]])
