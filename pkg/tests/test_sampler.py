import math

import numpy as np
import pytest
from scipy import integrate, stats

from rieszgas import (AnnealSchedule, GasModel, InitializationError, KernelSpec, PowerField,
                      SamplerParams, StepSizeError, UsageError, init_configuration, mala_step,
                      run_chain, total_energy)
from rieszgas.kernel import CustomField, quadratic
from rieszgas.sampler import (euler_maruyama, grid_metropolis_chain, metropolis_accepts,
                              new_chain_state, make_rng, read_snapshot_csv, write_snapshot_csv,
                              write_trace_csv, TRACE_HEADER)


def coulomb3(n_field=None):
    return GasModel(KernelSpec.coulomb(3), n_field or quadratic(), 1.0)


def test_params_validation():
    with pytest.raises(UsageError):
        SamplerParams(sweeps=10, burn_in=11)
    with pytest.raises(UsageError):
        SamplerParams(thin=0)
    with pytest.raises(UsageError):
        SamplerParams(algorithm="hmc")
    with pytest.raises(UsageError):
        AnnealSchedule.fixed(-1.0).beta(3)
    assert AnnealSchedule.nsquared().beta(7) == 49.0


def test_metropolis_rule():
    assert metropolis_accepts(-1.0, 0.999999)
    assert metropolis_accepts(0.0, 0.999999)
    assert not metropolis_accepts(math.inf, 0.0)
    u = make_rng(1).random(10**6)
    freq = metropolis_accepts(np.full(u.size, math.log(2)), u).mean()
    assert abs(freq - 0.5) < 0.002


def test_init_strategies():
    m = coulomb3()
    x = init_configuration(1, m, "uniform-ball", seed=3)
    assert x.shape == (1, 3) and np.linalg.norm(x) <= 1
    assert np.array_equal(init_configuration(50, m, seed=9), init_configuration(50, m, seed=9))
    g = init_configuration(2000, m, "gibbs-field", seed=1, radius=4.0)
    # exp(-|x|^2) per coordinate is N(0, 1/2)
    assert abs(g[:, 0].var() - 0.5) < 0.05
    m1 = GasModel(KernelSpec.coulomb(1), quadratic(), 1.0)
    from rieszgas import Box
    s = init_configuration(4, m1, "stratified", seed=0, box=Box((0.0,), (1.0,)))
    assert sorted(np.floor(s[:, 0] * 4).astype(int).tolist()) == [0, 1, 2, 3]
    with pytest.raises(InitializationError):
        steep = GasModel(KernelSpec.coulomb(3), PowerField(2.0, 1e4), 1.0)
        init_configuration(5, steep, "gibbs-field", seed=0, radius=50.0, max_batches=2)


def test_run_chain_zero_sweeps_and_determinism(backend):
    m = coulomb3()
    p = SamplerParams(sweeps=0)
    res = run_chain(m, 20, params=p, backend=backend)
    assert res.trace == []
    x0 = init_configuration(20, m, seed=np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(0).spawn(2)[0])))
    assert np.array_equal(res.state.x, x0)
    p = SamplerParams(sweeps=40, burn_in=20, thin=5, seed=4)
    a = run_chain(m, 20, params=p, backend=backend)
    b = run_chain(m, 20, params=p, backend=backend)
    assert a.trace == b.trace and np.array_equal(a.state.x, b.state.x)
    assert [r.sweep for r in a.trace] == [5, 10, 15, 20, 25, 30, 35, 40]


def test_backends_agree_on_chain():
    m = coulomb3()
    for alg in ("metropolis", "mala"):
        p = SamplerParams(algorithm=alg, sweeps=30, burn_in=10, thin=10, seed=2)
        a = run_chain(m, 15, params=p, backend="numba")
        b = run_chain(m, 15, params=p, backend="numpy")
        assert np.allclose(a.state.x, b.state.x, rtol=0, atol=1e-9)


def test_cached_energy_drift():
    m = coulomb3()
    p = SamplerParams(algorithm="metropolis", sweeps=10**4, seed=1, thin=10**4, resync_every=0)
    res = run_chain(m, 30, schedule=AnnealSchedule.nsquared(), params=p)
    ref = total_energy(res.state.x, m)
    assert abs(res.state.energy - ref) / abs(ref) < 1e-8


@pytest.mark.parametrize("alg", ["metropolis", "mala"])
def test_adaptation_reaches_target(alg):
    m = coulomb3()
    p = SamplerParams(algorithm=alg, sweeps=2000, burn_in=1500, thin=500, seed=3)
    res = run_chain(m, 100, params=p)
    target = p.target("metropolis" if alg == "metropolis" else "mala")
    key = "accept_rate_rw" if alg == "metropolis" else "accept_rate_mala"
    rate = np.mean([getattr(r, key) for r in res.trace])
    assert target - 0.1 <= rate <= target + 0.1


def test_mala_drift_free_limit_is_random_walk():
    flat = GasModel(KernelSpec.coulomb(1), CustomField(lambda x: np.zeros(len(x)),
                                                       lambda x: np.zeros_like(x)), 1.0)
    p = SamplerParams(algorithm="mala", step_size=0.5)
    st = new_chain_state(np.zeros((1, 1)), flat, 1.0, make_rng(0), p, backend="numpy")
    for _ in range(200):
        mala_step(st, flat, p, backend="numpy")
    # a flat target accepts every proposal
    assert st.counts["mala_accepted"] == st.counts["mala_proposed"] == 200


def test_mala_gaussian_target():
    m = GasModel(KernelSpec.coulomb(1), quadratic(), 1.0)
    p = SamplerParams(algorithm="mala", step_size=1.0, sweeps=10**6, burn_in=1000, thin=10,
                      seed=5, adapt=False)
    samples = []
    run_chain(m, 1, AnnealSchedule.fixed(1.0), p, observers=[lambda r, x: samples.append(x[0, 0])])
    assert stats.kstest(samples, stats.norm(scale=math.sqrt(0.5)).cdf).statistic < 0.005


def test_grid_detailed_balance():
    v = np.array([0.0, 0.3, 1.0, 0.2, 0.7])
    beta = 1.5
    n = 10**6
    path = grid_metropolis_chain(v, beta, n, seed=7)
    pi = np.exp(-beta * v)
    pi /= pi.sum()
    counts = np.zeros((5, 5))
    np.add.at(counts, (path[:-1], path[1:]), 1.0)
    visits = counts.sum(axis=1)
    T = counts / visits[:, None]
    assert np.allclose(visits / n, pi, atol=0.01)
    for i in range(4):
        j = i + 1
        se = math.sqrt(pi[i] ** 2 * T[i, j] * (1 - T[i, j]) / visits[i]
                       + pi[j] ** 2 * T[j, i] * (1 - T[j, i]) / visits[j])
        assert abs(pi[i] * T[i, j] - pi[j] * T[j, i]) < 3 * se
    # a chain targeting the wrong law is caught by the same statistic
    bad = grid_metropolis_chain(v, 0.5 * beta, n, seed=7)
    counts = np.zeros((5, 5))
    np.add.at(counts, (bad[:-1], bad[1:]), 1.0)
    T = counts / counts.sum(axis=1)[:, None]
    assert max(abs(pi[i] * T[i, i + 1] - pi[i + 1] * T[i + 1, i]) for i in range(4)) > 0.01


def test_euler_maruyama_ou_variance():
    m = GasModel(KernelSpec.coulomb(1), quadratic(), 1.0)
    dt = 1e-3
    st = new_chain_state(np.zeros((1, 1)), m, 1.0, make_rng(3), SamplerParams())
    xs = []
    for _ in range(20000):
        euler_maruyama(st, m, 1.0, 1.0, dt, nsteps=1000)
        xs.append(st.x[0, 0])
    # grad H = 2x: x' = (1 - 2 dt) x + sqrt(2 dt) xi
    exact = 2 * dt / (1 - (1 - 2 * dt) ** 2)
    assert exact == pytest.approx(1 / (2 * (1 - dt)), rel=1e-12)
    assert abs(np.var(xs) / exact - 1) < 0.05


def test_euler_maruyama_frozen_and_two_particles():
    flat = GasModel(KernelSpec.coulomb(1), CustomField(lambda x: np.zeros(len(x)),
                                                       lambda x: np.zeros_like(x)), 1.0)
    st = new_chain_state(np.zeros((1, 1)), flat, 1e12, make_rng(0), SamplerParams(), "numpy")
    euler_maruyama(st, flat, 1.0, 1e12, 1e-3, backend="numpy")
    assert np.linalg.norm(st.x) < 1e-5
    m = coulomb3()
    x = np.array([[0.5, 0, 0], [-0.5, 0, 0]])
    st = new_chain_state(x, m, 4.0, make_rng(1), SamplerParams())
    euler_maruyama(st, m, 1.0, 4.0, 1e-4, nsteps=10**4)
    assert np.linalg.norm(st.x[0] - st.x[1]) > 0
    with pytest.raises(StepSizeError):
        big = new_chain_state(np.array([[1.0]]), GasModel(KernelSpec.coulomb(1), PowerField(8.0), 1.0),
                              1.0, make_rng(0), SamplerParams())
        euler_maruyama(big, GasModel(KernelSpec.coulomb(1), PowerField(8.0), 1.0), 1.0, 1.0, 10.0,
                       nsteps=50)


def test_csv_roundtrip(tmp_path):
    x = make_rng(0).normal(size=(7, 3))
    write_snapshot_csv(tmp_path / "s.csv", x)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x1,x2,x3"
    assert np.array_equal(read_snapshot_csv(tmp_path / "s.csv"), x)
    res = run_chain(coulomb3(), 5, params=SamplerParams(sweeps=4, thin=2))
    write_trace_csv(tmp_path / "t.csv", res.trace)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(TRACE_HEADER)
