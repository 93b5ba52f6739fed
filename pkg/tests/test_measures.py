import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats
from scipy.spatial.distance import cdist

from rieszgas import (DiscreteMeasure, GasModel, KernelSpec, MethodUnavailableError, RadialCDF,
                      UsageError, discrete_rate_I, empirical_measure, fortet_mourier, max_radius,
                      radial_cdf_of_density, radial_ks, solve_radial_coulomb, total_energy,
                      uniform_ball_density, wasserstein1)
from rieszgas.kernel import PowerField, quadratic
from rieszgas.measures import diagnostics, ks_statistic, write_histogram_csv


def brute_force_transport(mu, nu):
    """Transport LP for cost min(d, 2), solved by a dense simplex-free method."""
    cost = np.minimum(cdist(mu.points, nu.points), 2.0)
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = optimize.linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
                           method="highs-ipm")
    return res.fun


def brute_force_assignment(mu, nu):
    cost = np.minimum(cdist(mu.points, nu.points), 2.0)
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def random_measure(rng, k, d=2, scale=1.5, uniform=False):
    w = np.full(k, 1.0 / k) if uniform else rng.dirichlet(np.ones(k))
    return DiscreteMeasure(rng.uniform(-scale, scale, (k, d)), w)


def test_empirical_measure():
    m = empirical_measure([[1.0, 0, 0], [-1.0, 0, 0]])
    assert np.array_equal(m.weights, [0.5, 0.5])
    m = empirical_measure(np.random.default_rng(0).normal(size=(7, 2)))
    assert abs(m.weights.sum() - 1) <= 1e-15
    with pytest.raises(UsageError):
        DiscreteMeasure([[0.0], [1.0]], [0.5, 0.6])


def test_discrete_rate_I():
    m = GasModel(KernelSpec.coulomb(3), quadratic(), 1.0)
    x = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    assert discrete_rate_I(empirical_measure(x), m) == pytest.approx(1.125, rel=1e-15)
    assert discrete_rate_I(empirical_measure([[0.0, 0, 0]]), m) == 0.0
    m2 = GasModel(KernelSpec.coulomb(3), quadratic(), 2.0)
    pair1 = discrete_rate_I(empirical_measure(x), m) - 1.0
    pair2 = discrete_rate_I(empirical_measure(x), m2) - 1.0
    assert pair2 == pytest.approx(2 * pair1)
    rng = np.random.default_rng(1)
    for model in (m, GasModel(KernelSpec.riesz(3, 1.3), PowerField(3.0), 0.5)):
        for _ in range(5):
            y = rng.normal(size=(25, 3))
            assert discrete_rate_I(empirical_measure(y), model) == pytest.approx(
                total_energy(y, model), rel=1e-10)


def test_fm_values():
    d0 = empirical_measure([[0.0, 0, 0]])
    assert fortet_mourier(d0, d0) == 0.0
    assert fortet_mourier(d0, empirical_measure([[1.0, 0, 0]])) == pytest.approx(1.0, abs=1e-12)
    assert fortet_mourier(d0, empirical_measure([[5.0, 0, 0]])) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(MethodUnavailableError):
        fortet_mourier(d0, empirical_measure([[1.0, 0, 0], [2.0, 0, 0]]), "truncated-transport")
    with pytest.raises(UsageError):
        fortet_mourier(d0, empirical_measure([[1.0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))
def test_fm_metric_axioms(seed, a, b, c):
    rng = np.random.default_rng(seed)
    mu, nu, la = random_measure(rng, a), random_measure(rng, b), random_measure(rng, c)
    dmn, dnm = fortet_mourier(mu, nu), fortet_mourier(nu, mu)
    assert abs(dmn - dnm) < 1e-9
    assert dmn <= fortet_mourier(mu, la) + fortet_mourier(la, nu) + 1e-9
    assert 0 <= dmn <= 2
    assert fortet_mourier(mu, mu) < 1e-12
    assert dmn <= wasserstein1(mu, nu) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_fm_matches_brute_force(seed, a, b):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, a, scale=3), random_measure(rng, b, scale=3)
    assert fortet_mourier(mu, nu) == pytest.approx(brute_force_transport(mu, nu), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_truncated_transport_agrees(seed, k):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, k, 3, 2.0, True), random_measure(rng, k, 3, 2.0, True)
    lp = fortet_mourier(mu, nu, "exact-lp")
    assert fortet_mourier(mu, nu, "truncated-transport") == pytest.approx(lp, abs=1e-6)
    assert brute_force_assignment(mu, nu) == pytest.approx(lp, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 8))
def test_fm_equals_w1_small_diameter(seed, a, b):
    rng = np.random.default_rng(seed)
    # points in a ball of radius 1: diameter <= 2
    def ball(k):
        g = rng.normal(size=(k, 3))
        g /= np.linalg.norm(g, axis=1)[:, None]
        return g * rng.random((k, 1)) ** (1 / 3)
    mu = DiscreteMeasure(ball(a), rng.dirichlet(np.ones(a)))
    nu = DiscreteMeasure(ball(b), rng.dirichlet(np.ones(b)))
    assert fortet_mourier(mu, nu) == pytest.approx(wasserstein1(mu, nu), abs=1e-8)


def test_fm_subsampling_is_seeded():
    rng = np.random.default_rng(4)
    mu, nu = empirical_measure(rng.normal(size=(400, 2))), empirical_measure(rng.normal(size=(400, 2)))
    a = fortet_mourier(mu, nu, seed=3)
    assert a == fortet_mourier(mu, nu, seed=3)
    assert 0 <= a <= 2


def test_radial_cdf_of_density():
    res = solve_radial_coulomb(3, quadratic(), 1.0)
    F = radial_cdf_of_density(res.density)
    assert F(res.R0 / 2) == pytest.approx(0.125, abs=1e-12)
    assert F(res.R0) == pytest.approx(1.0, abs=1e-10)
    assert F(res.r0) == 0.0
    ring = solve_radial_coulomb(3, PowerField(4.0), 1.0)
    G = radial_cdf_of_density(ring.density)
    r = np.linspace(0, ring.R0, 13)
    assert np.allclose(G(r), 4 * r**5, atol=1e-10)
    grid = np.linspace(0, 1.2, 400)
    assert np.all(np.diff(G(grid)) >= 0) and G(grid).min() >= 0 and G(grid).max() <= 1


def test_radial_ks():
    F = RadialCDF.power(1.0, 3)
    rng = np.random.default_rng(0)
    n = 10**4
    r = rng.random(n) ** (1 / 3)
    g = rng.normal(size=(n, 3))
    x = g / np.linalg.norm(g, axis=1)[:, None] * r[:, None]
    ks = radial_ks(x, F)
    assert ks < 0.02
    assert ks == pytest.approx(stats.kstest(r, lambda t: np.clip(t, 0, 1) ** 3).statistic, abs=1e-12)
    q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    assert radial_ks(x @ q.T, F) == pytest.approx(ks, abs=1e-12)
    assert radial_ks(np.zeros((5, 3)), RadialCDF(lambda t: np.where(t < 0.5, 0.0, 1.0))) == 1.0
    assert ks_statistic([0.5, 0.5], lambda t: np.clip(t, 0, 1)) == 0.5


def test_max_radius():
    assert max_radius([[0.0, 0, 2]]) == 2.0
    x = np.random.default_rng(1).normal(size=(30, 3))
    assert max_radius(x[::-1]) == max_radius(x)


def test_diagnostics_and_histogram(tmp_path):
    rng = np.random.default_rng(0)
    ub = uniform_ball_density(3, 1.0)
    x = ub.sample(200, rng)
    out = diagnostics(x, RadialCDF.power(1.0, 3), ub.sample(200, rng), seed=5)
    assert set(out) == {"ks", "max_radius", "fm_distance", "fm_method", "N", "seed"}
    assert out["fm_method"] == "truncated-transport" and 0 <= out["fm_distance"] <= 2
    out = diagnostics(x, None, ub.sample(150, rng))
    assert out["fm_method"] == "exact-lp"
    write_histogram_csv(tmp_path / "h.csv", x, bins=10)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,count" and len(lines) == 11
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == 200
