import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from selfreg.backend import available_backends
from selfreg.dual_engine import (DualState, comparison_samples, dual_rows, dual_summary,
                                 fk_weight, quantile_dominance, quantile_se, run_dual,
                                 simulate_alpha_given_kappa, simulate_kappa, total_dual_mass)
from selfreg.geometry import build_torus, from_matrix, nearest_neighbour_steps
from selfreg.model import ModelParams

SINGLE = from_matrix(np.ones((1, 1)))
RING3 = build_torus(1, 3, nearest_neighbour_steps(1))
SCHEMES = ("full_truncation", "split", "qe")


def kappa_at(G, M, entries):
    k = np.zeros((G, M), dtype=np.int64)
    for site, m, c in entries:
        k[site, m] += c
    return k


def logistic(t, a0, gamma=1.0, K=1.0):
    """Solution of a' = gamma a (K - a / 2)."""
    e = np.exp(gamma * K * t)
    return 2 * K * a0 * e / (2 * K + a0 * (e - 1))


def test_total_dual_mass_examples():
    assert total_dual_mass(np.zeros(3)) == 0.0
    assert total_dual_mass(np.array([1.0, 2.0, 0.5])) == 3.5
    assert total_dual_mass(DualState([1.0, 2.0, 0.5], np.zeros((3, 1)))) == 3.5
    assert_array_equal(total_dual_mass(np.ones((2, 4, 3))), np.full((2, 4), 3.0))


def test_dual_state_validation():
    with pytest.raises(ValueError):
        DualState([-1.0], np.zeros((1, 1)))
    with pytest.raises(ValueError):
        DualState([1.0], -np.ones((1, 1)))
    s = DualState([0.5, 0.0], kappa_at(2, 2, [(0, 1, 2), (1, 0, 1)]))
    assert_array_equal(s.kbar, [2, 1])
    assert s.n_particles == 3


def test_single_particle_never_coalesces_and_walks_at_rate_one():
    jumps = []
    for r in range(3000):
        path = simulate_kappa(kappa_at(3, 1, [(0, 0, 1)]), RING3, 1.0, 2.0, 1, replicate=r)
        assert np.all(path.particle_counts() == 1)
        jumps.append(path.n_jumps)
    jumps = np.array(jumps)
    # out-rate 1 - abar(xi, xi) = 1, so the jump count on [0, 2] is Poisson(2)
    assert abs(jumps.mean() - 2.0) <= 3 * math.sqrt(2.0 / jumps.size)


def test_kingman_absorption_time():
    times = np.array([simulate_kappa(kappa_at(1, 1, [(0, 0, 4)]), SINGLE, 1.0, 100.0, 2,
                                     replicate=r).hitting_time(1) for r in range(20_000)])
    se = times.std(ddof=1) / math.sqrt(times.size)
    assert abs(times.mean() - 1.5) <= 3 * se


def test_different_types_never_coalesce():
    path = simulate_kappa(kappa_at(1, 2, [(0, 0, 1), (0, 1, 1)]), SINGLE, 1.0, 50.0, 0)
    assert path.n_jumps == 0
    assert_array_equal(path.at(50.0), kappa_at(1, 2, [(0, 0, 1), (0, 1, 1)]))


def test_kappa_path_queries():
    path = simulate_kappa(kappa_at(1, 1, [(0, 0, 3)]), SINGLE, 1.0, 100.0, 4)
    assert path.hitting_time(3) == 0.0
    assert path.hitting_time(0) == math.inf
    assert_array_equal(path.at(0.0), [[3]])
    assert_array_equal(path.at(100.0), [[1]])
    with pytest.raises(ValueError):
        path.at(101.0)
    with pytest.raises(ValueError):
        simulate_kappa(kappa_at(1, 1, [(0, 0, 3)]), SINGLE, 0.0, 1.0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 2)),
                                                     min_size=1, max_size=8),
       st.floats(0.2, 3.0), st.integers(0, 2 ** 40))
def test_kappa_jumps_conserve_or_merge(side, M, placements, gamma, seed):
    geo = build_torus(1, side, {(1,): 0.7, (-1,): 0.3})
    k0 = kappa_at(side, M, [(s % side, m % M, 1) for s, m in placements])
    path = simulate_kappa(k0, geo, gamma, 3.0, seed)
    counts = path.particle_counts()
    steps = np.diff(counts)
    assert set(steps.tolist()) <= {0, -1}
    assert np.all(path.states >= 0)
    per_type = path.states.sum(axis=1)
    assert np.all(np.diff(per_type, axis=0) <= 0)
    assert np.all(per_type >= (k0.sum(axis=0) > 0))


def test_kappa_time_scaling():
    """Multiplying gamma by c runs the single-site coalescent c times faster."""
    k0 = kappa_at(1, 1, [(0, 0, 6)])
    for r in range(50):
        slow = simulate_kappa(k0, SINGLE, 1.0, 10.0, 3, replicate=r)
        fast = simulate_kappa(k0, SINGLE, 2.5, 4.0, 3, replicate=r)
        assert_allclose(fast.times * 2.5, slow.times[:fast.times.size], rtol=1e-12)
    # equality in law of the count at t (rate gamma) and t / c (rate c gamma), independent seeds
    a = np.array([simulate_kappa(k0, SINGLE, 1.0, 0.4, 5, replicate=r).particle_counts()[-1]
                  for r in range(4000)])
    b = np.array([simulate_kappa(k0, SINGLE, 2.5, 0.16, 6, replicate=r).particle_counts()[-1]
                  for r in range(4000)])
    se = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(a.size)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_empty_dual_stays_zero():
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    tr = run_dual(np.zeros(3), kappa_at(3, 2, []), RING3, p, [0.5, 1.0], 0, replicates=5)
    assert_array_equal(tr.alpha, 0.0)
    assert_array_equal(tr.fk, 0.0)


def test_fk_is_zero_without_particles():
    p = ModelParams.exchangeable_model(1, 1.0, 2.0, 0.5)
    tr = run_dual([0.3, 1.0, 0.0], kappa_at(3, 1, []), RING3, p, [1.0], 0, replicates=5)
    assert_array_equal(tr.fk, 0.0)
    assert np.all(tr.alpha[:, -1].sum(axis=1) > 0)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_one_step_drift_and_noise(scheme):
    """alpha=1, K=1, gamma=1, lambda=0.5, kbar=2: drift 1.5 and noise variance 1 per unit time."""
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    h = 1e-3
    tr = run_dual([1.0], kappa_at(1, 2, [(0, 0, 1), (0, 1, 1)]), SINGLE, p, [h], 7, dt=h,
                  replicates=100_000, scheme=scheme)
    inc = tr.alpha[:, -1, 0] - 1.0
    m, se = inc.mean(), inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(m - 1.5 * h) <= 3 * se + 1e-6
    v = inc.var(ddof=1)
    assert abs(v - h) <= 4 * h * math.sqrt(2.0 / inc.size) + 5 * h * h


def test_noise_free_alpha_follows_logistic_ode():
    p = ModelParams.exchangeable_model(1, 1.0, 1.0, 0.0)
    ts = np.linspace(0.0, 1.0, 11)
    for a0 in (0.1, 0.5, 1.0, 2.0):
        tr = run_dual([a0], kappa_at(1, 1, []), SINGLE, p, ts, 0, dt=1e-3,
                      scheme="full_truncation")
        assert np.max(np.abs(tr.alpha[0, :, 0] - logistic(ts, a0))) <= 1e-4


@pytest.mark.parametrize("scheme", SCHEMES)
def test_noise_free_alpha_converges_at_first_order(scheme):
    p = ModelParams.exchangeable_model(1, 1.0, 1.0, 0.0)
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        tr = run_dual([0.3], kappa_at(1, 1, []), SINGLE, p, [3.0], 0, dt=dt, scheme=scheme)
        errs.append(abs(tr.alpha[0, -1, 0] - logistic(3.0, 0.3)))
    assert errs[2] < errs[1] < errs[0]
    assert 1.6 < errs[0] / errs[1] < 2.4 and 1.6 < errs[1] / errs[2] < 2.4


def test_no_competition_means_no_immigration():
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.0)
    tr = run_dual(np.zeros(3), kappa_at(3, 2, [(0, 0, 2), (1, 1, 1)]), RING3, p,
                  [1.0, 2.0, 4.0], 3, replicates=20)
    assert_array_equal(tr.total_mass, 0.0)


def test_kappa_is_autonomous():
    k0 = kappa_at(3, 2, [(0, 0, 2), (0, 1, 1), (2, 0, 1)])
    obs = [0.5, 1.0, 2.0]
    base = run_dual(np.zeros(3), k0, RING3, ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5),
                    obs, 4, replicates=30)
    other = run_dual(np.full(3, 2.0), k0, RING3, ModelParams.exchangeable_model(2, 1.0, 3.0, 1.5),
                     obs, 4, replicates=30)
    assert_array_equal(base.kappa, other.kappa)
    path = simulate_kappa(k0, RING3, 1.0, 2.0, 4, replicate=0)
    for seed in (4, 99):
        tr = simulate_alpha_given_kappa(np.zeros(3), path, RING3,
                                        ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5), 1e-3,
                                        seed, observation_times=obs)
        assert_array_equal(tr.kappa[0], np.stack([path.at(t) for t in obs]))
    assert_array_equal(base.kappa[0], np.stack([path.at(t) for t in obs]))


def test_replay_matches_batch_driver():
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    k0 = kappa_at(3, 2, [(0, 0, 1), (0, 1, 1)])
    obs = [0.25, 0.5]
    batch = run_dual(np.zeros(3), k0, RING3, p, obs, 12, replicates=3)
    for r in range(3):
        path = simulate_kappa(k0, RING3, 1.0, 0.5, 12, replicate=r)
        one = simulate_alpha_given_kappa(np.zeros(3), path, RING3, p, 1e-3, 12, replicate=r,
                                         observation_times=obs)
        assert_allclose(one.alpha[0], batch.alpha[r], rtol=1e-13, atol=1e-15)
        assert_allclose(one.fk[0], batch.fk[r], rtol=1e-13, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 40), st.sampled_from(SCHEMES))
def test_fk_nonpositive_without_capacity(n, seed, scheme):
    """K = 0, alpha0 = 0, n lone particles of distinct types at distinct sites, no migration."""
    geo = from_matrix(np.eye(n))
    p = ModelParams.exchangeable_model(n, 1.0, 0.0, 0.7)
    k0 = kappa_at(n, n, [(i, i, 1) for i in range(n)])
    tr = run_dual(np.zeros(n), k0, geo, p, [0.5, 1.0, 2.0], seed, dt=1e-2, replicates=10,
                  scheme=scheme)
    assert np.all(tr.fk <= 0.0)
    assert_array_equal(tr.kappa[:, -1], np.broadcast_to(k0, (10, n, n)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.floats(0.2, 2.0), st.floats(0.0, 2.0),
       st.floats(0.0, 1.5), st.integers(0, 4), st.sampled_from(SCHEMES), st.integers(0, 2 ** 40))
def test_alpha_stays_nonnegative(side, M, g, K, lam, n, scheme, seed):
    geo = build_torus(1, side, nearest_neighbour_steps(1))
    p = ModelParams.exchangeable_model(M, g, K, lam)
    k0 = kappa_at(side, M, [(0, 0, n)])
    tr = run_dual(np.zeros(side), k0, geo, p, np.linspace(0, 1, 5), seed, dt=1e-2,
                  replicates=6, scheme=scheme)
    assert np.all(tr.alpha >= 0) and np.all(np.isfinite(tr.fk))


@pytest.mark.skipif("cython" not in available_backends(), reason="compiled core not built")
@pytest.mark.parametrize("scheme", SCHEMES)
def test_backends_identical(scheme):
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    geo = build_torus(1, 4, {(1,): 0.7, (-1,): 0.3})
    k0 = kappa_at(4, 2, [(0, 0, 2), (0, 1, 1), (3, 1, 1)])
    a = run_dual(np.array([0.0, 0.5, 0.0, 1.0]), k0, geo, p, [0.3, 1.0], 2, dt=1e-2,
                 replicates=30, scheme=scheme, backend="cython")
    b = run_dual(np.array([0.0, 0.5, 0.0, 1.0]), k0, geo, p, [0.3, 1.0], 2, dt=1e-2,
                 replicates=30, scheme=scheme, backend="python")
    assert_array_equal(a.alpha, b.alpha)
    assert_array_equal(a.kappa, b.kappa)
    assert_array_equal(a.fk, b.fk)
    assert_array_equal(a.bound_ok, b.bound_ok)


def test_fk_weight_clips():
    w, n = fk_weight(np.array([0.0, 10.0, 60.0, -5.0]))
    assert_allclose(w, np.exp([0.0, 10.0, 50.0, -5.0]))
    assert n == 1


def test_comparison_process_mean():
    """E abar(t) = (abar0 + lam n0 / K) e^{gamma K t} - lam n0 / K."""
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    obs = [0.0, 0.5, 1.0]
    x = comparison_samples(0.2, 2, p, obs, 3, dt=1e-3, replicates=20_000)
    assert x.shape == (20_000, 3)
    for ti, t in enumerate(obs):
        exact = (0.2 + 0.5 * 2 / 1.0) * math.exp(t) - 0.5 * 2 / 1.0
        se = x[:, ti].std(ddof=1) / math.sqrt(x.shape[0])
        assert abs(x[:, ti].mean() - exact) <= 3 * se + 1e-12
    with pytest.raises(ValueError):
        comparison_samples(0.0, 1, ModelParams.exchangeable_model(1, 1.0, 1.0, 0.0), obs, 0)


def test_quantile_tools():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40_000)
    q, se = quantile_se(x, 0.5)
    # asymptotic SE of the normal median: sqrt(pi / 2 / n)
    assert se == pytest.approx(math.sqrt(math.pi / 2 / x.size), rel=0.15)
    assert abs(q) <= 3 * se
    assert quantile_dominance(x, x + 1.0)["holds"]
    assert not quantile_dominance(x + 1.0, x)["holds"]
    assert quantile_dominance(x, rng.normal(size=40_000))["holds"]


def test_rows_and_summary():
    p = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    tr = run_dual(np.zeros(3), kappa_at(3, 2, [(0, 0, 1), (0, 1, 1)]), RING3, p, [0.0, 0.5], 1,
                  replicates=4, rep_start=2)
    rows = list(dual_rows(tr))
    assert len(rows) == 4 * 2 * 3
    assert rows[0] == (2, 0.0, 0, 0.0, 2, 1, 1)
    summ = dual_summary(tr)
    assert summ["replicates"] == 4 and len(summ["rows"]) == 2
    assert summ["rows"][0]["fk_max"] == 0.0
    assert 0.0 <= summ["pathwise_bound_fraction"] <= 1.0
    assert tr.state(1).n_particles == int(tr.kappa[1, -1].sum())
