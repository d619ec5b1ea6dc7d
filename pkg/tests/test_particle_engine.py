import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from selfreg import _pycore
from selfreg.backend import available_backends
from selfreg.errors import ExplosionError
from selfreg.geometry import build_torus, from_matrix, nearest_neighbour_steps
from selfreg.model import ModelParams
from selfreg.particle_engine import (EventRateTable, ParticleState, centred_window,
                                     freeze_outside, generator_apply, init_particles,
                                     run_particles, snapshot_rows, step_event)
from selfreg.rng import CounterStream

SINGLE = from_matrix(np.ones((1, 1)))
RING3 = build_torus(1, 3, nearest_neighbour_steps(1))


def test_init_floor_rule():
    p = ModelParams([1.0], [1.0], [[1.0]])
    assert init_particles(SINGLE, p, 2.5, 1.0).counts[0, 0] == 2
    s = init_particles(SINGLE, p, 2.5, 0.5)
    assert s.counts[0, 0] == 5 and s.mass[0, 0] == 2.5
    assert init_particles(SINGLE, p, 0.0, 0.1).counts[0, 0] == 0
    # representation error in the quotient does not lose a particle
    assert init_particles(SINGLE, p, 0.3, 0.1).counts[0, 0] == 3
    with pytest.raises(ValueError):
        init_particles(SINGLE, p, -1.0, 1.0)
    with pytest.raises(ValueError):
        init_particles(SINGLE, p, 1.0, 0.0)


def test_single_site_rates():
    p = ModelParams([1.0], [1.0], [[1.0]])
    table = EventRateTable(ParticleState(np.array([[2]])), SINGLE, p)
    assert table.rate(0, 0, "birth") == 3.0
    assert table.rate(0, 0, "death") == 5.0
    assert table.rate(0, 0, "migration") == 0.0
    assert table.rate(0, 0, "birth") / table.total == 3.0 / 8.0


def test_two_type_death_rate():
    p = ModelParams([1.0, 1.0], [1.0, 1.0], np.ones((2, 2)))
    table = EventRateTable(ParticleState(np.array([[2, 1]])), SINGLE, p)
    assert table.rate(0, 0, "death") == 7.0


def test_birth_probability_by_sampling():
    p = ModelParams([1.0], [1.0], [[1.0]])
    n = 4000
    births = 0
    for r in range(n):
        table = EventRateTable(ParticleState(np.array([[2]])), SINGLE, p)
        _, ev = step_event(ParticleState(np.array([[2]])), table, CounterStream(3, r))
        births += ev.kind == "birth"
    frac = births / n
    assert abs(frac - 3 / 8) <= 3 * math.sqrt(3 / 8 * 5 / 8 / n)


def test_empty_state_jumps_to_horizon():
    p = ModelParams([1.0], [1.0], [[1.0]])
    state = ParticleState(np.zeros((1, 1), dtype=np.int64))
    table = EventRateTable(state, SINGLE, p)
    new, ev = step_event(state, table, CounterStream(0), horizon=2.0)
    assert new.time == 2.0 and ev.kind == "none"
    assert_array_equal(new.counts, 0)


def test_step_event_replays_the_kernel():
    p = ModelParams([1.0, 0.7], [1.0, 2.0], [[0.5, 0.2], [0.1, 0.4]])
    state = init_particles(RING3, p, [[2, 1], [0, 3], [1, 0]], 1.0)
    horizon = 0.4
    tr = run_particles(state, RING3, p, horizon, [horizon], 9, replicates=1, rep_start=4)
    table = EventRateTable(state, RING3, p)
    rng = CounterStream(9, 4)
    cur = state
    while cur.time < horizon:
        cur, _ = step_event(cur, table, rng, horizon)
    assert_array_equal(cur.counts, tr.counts[0, -1])
    assert cur.n_events == tr.n_events[0]


def test_rate_table_total_stays_consistent():
    rng = np.random.default_rng(0)
    tree = _pycore.SumTree(37)
    leaves = rng.random(37)
    tree.build(list(leaves))
    n = 1_000_000
    for i, r in zip(rng.integers(0, 37, n), rng.exponential(size=n) * 10.0 ** rng.integers(-6, 6, n)):
        tree.update(int(i), float(r))
        leaves[i] = r
    assert abs(tree.total - math.fsum(leaves)) <= 1e-9 * math.fsum(leaves)
    u = 0.37
    leaf = tree.select(u)
    cum = np.cumsum(leaves)
    assert leaf == int(np.searchsorted(cum, u * cum[-1], side="right"))


def test_rate_table_after_many_events():
    p = ModelParams([1.0, 1.0], [2.0, 1.0], np.full((2, 2), 0.3))
    state = init_particles(RING3, p, 2.0, 1.0)
    table = EventRateTable(state, RING3, p)
    rng = CounterStream(5)
    for _ in range(20_000):
        state, ev = step_event(state, table, rng)
        if ev.kind == "none":
            break
    assert abs(table.total - table.recomputed_total()) <= 1e-9 * table.recomputed_total()


def test_critical_branching_preserves_mean():
    p = ModelParams([1.0], [0.0], [[0.0]])
    state = init_particles(RING3, p, 3.0, 1.0)
    tr = run_particles(state, RING3, p, 1.0, [1.0], 2, replicates=20_000)
    total = tr.counts[:, -1].sum(axis=(1, 2))
    se = total.std(ddof=1) / math.sqrt(total.size)
    assert abs(total.mean() - 9.0) <= 3 * se


def test_linear_single_site_mean_is_exponential():
    p = ModelParams([1.0], [1.0], [[0.0]])
    state = init_particles(SINGLE, p, 1.0, 1.0)
    tr = run_particles(state, SINGLE, p, 1.0, [1.0], 4, replicates=20_000)
    z = tr.counts[:, -1, 0, 0]
    assert abs(z.mean() - math.e) <= 3 * z.std(ddof=1) / math.sqrt(z.size)


def test_pure_migration_conserves_count():
    p = ModelParams([1.0, 1.0], [1.0, 1.0], np.ones((2, 2)))
    geo = build_torus(2, 4, nearest_neighbour_steps(2))
    state = init_particles(geo, p, 1.0, 0.5)
    obs = np.linspace(0, 5, 11)
    tr = run_particles(state, geo, p, 5.0, obs, 1, replicates=5, branching=False)
    assert_array_equal(tr.counts.sum(axis=(2, 3)), state.counts.sum())
    assert np.all(tr.n_events > 100)


def test_freeze_all_active_matches_unconstrained():
    p = ModelParams([1.0], [1.0], [[0.5]])
    state = init_particles(RING3, p, 1.0, 0.5)
    a = run_particles(state, RING3, p, 1.0, [0.5, 1.0], 3, replicates=20)
    b = run_particles(state, RING3, p, 1.0, [0.5, 1.0], 3, replicates=20,
                      active=freeze_outside(RING3, range(3)))
    assert_array_equal(a.counts, b.counts)
    with pytest.raises(ValueError):
        freeze_outside(RING3, [])
    with pytest.raises(ValueError):
        freeze_outside(RING3, [3])


def test_frozen_sites_never_branch_or_emit():
    geo = build_torus(1, 8, nearest_neighbour_steps(1))
    p = ModelParams([1.0], [1.0], [[0.5]])
    mask = freeze_outside(geo, [2, 3, 4, 5])
    state = init_particles(geo, p, 2.0, 1.0)
    table = EventRateTable(state, geo, p, active=mask)
    rng = CounterStream(8)
    frozen = {0, 1, 6, 7}
    before = state.counts.copy()
    for _ in range(3000):
        state, ev = step_event(state, table, rng, horizon=50.0)
        if ev.kind == "none":
            break
        assert ev.site not in frozen
    # frozen sites only gain (absorbed migrants)
    assert np.all(state.counts[sorted(frozen)] >= before[sorted(frozen)])


def test_window_is_centred():
    geo = build_torus(1, 9, nearest_neighbour_steps(1))
    assert centred_window(geo, 3) == [0, 1, 8]
    assert centred_window(geo, 9) == list(range(9))


def test_explosion_guard():
    p = ModelParams([1.0], [5.0], [[0.0]])
    state = init_particles(SINGLE, p, 5.0, 1.0)
    with pytest.raises(ExplosionError):
        run_particles(state, SINGLE, p, 10.0, [10.0], 0, replicates=2, max_events=100)
    tr = run_particles(state, SINGLE, p, 10.0, [10.0], 0, replicates=2, max_events=100,
                       raise_on_explosion=False)
    assert np.all(tr.status == _pycore.STATUS_EXPLOSION)


def test_replicate_blocks_and_threads_agree():
    p = ModelParams([1.0, 1.0], [1.0, 1.0], np.full((2, 2), 0.5))
    state = init_particles(RING3, p, 1.0, 0.5)
    obs = [0.25, 0.5]
    full = run_particles(state, RING3, p, 0.5, obs, 11, replicates=1100)
    head = run_particles(state, RING3, p, 0.5, obs, 11, replicates=600)
    tail = run_particles(state, RING3, p, 0.5, obs, 11, replicates=500, rep_start=600)
    threaded = run_particles(state, RING3, p, 0.5, obs, 11, replicates=1100, threads=3)
    assert_array_equal(full.counts, np.concatenate([head.counts, tail.counts]))
    assert_array_equal(full.counts, threaded.counts)


@pytest.mark.skipif("cython" not in available_backends(), reason="compiled core not built")
def test_backends_identical():
    p = ModelParams([1.0, 0.5], [1.0, 2.0], [[0.5, 0.1], [0.3, 0.2]])
    geo = build_torus(2, 3, {(1, 0): 0.5, (0, 1): 0.3, (-1, -1): 0.2})
    state = init_particles(geo, p, [1.0, 2.0], 0.5)
    kw = dict(replicates=40, active=freeze_outside(geo, range(6)))
    a = run_particles(state, geo, p, 0.7, [0.2, 0.7], 5, backend="cython", **kw)
    b = run_particles(state, geo, p, 0.7, [0.2, 0.7], 5, backend="python", **kw)
    assert_array_equal(a.counts, b.counts)
    assert_array_equal(a.n_events, b.n_events)


def test_generator_of_total_count():
    p = ModelParams([1.0, 2.0], [1.0, 0.5], [[0.5, 0.2], [0.1, 0.4]])
    eps = 0.5
    z = np.array([[[2, 1], [0, 3], [1, 0]]])
    total = lambda x: x.sum(axis=(-2, -1))
    out = generator_apply(total, z, RING3, p, eps)
    # migration moves mass; only branching changes the total: eps * (birth - death)
    g = p.gamma / eps
    comp = (eps * z[0]) @ p.lam.T
    expected = eps * np.sum(g * (0.5 + eps * p.K) * z[0] - g * (0.5 + eps * comp) * z[0])
    assert out[0] == pytest.approx(expected, rel=1e-12)


def test_snapshot_rows_layout():
    p = ModelParams([1.0], [1.0], [[0.5]])
    tr = run_particles(init_particles(RING3, p, 1.0, 0.5), RING3, p, 0.1, [0.0, 0.1], 0,
                       replicates=2, rep_start=3)
    rows = list(snapshot_rows(tr))
    assert len(rows) == 2 * 2 * 3
    assert rows[0] == (3, 0.0, 0, 0, 2, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.floats(0.2, 2.0), st.floats(0.0, 2.0),
       st.floats(0.0, 1.0), st.sampled_from([1.0, 0.5, 0.25]), st.integers(0, 2 ** 32))
def test_counts_stay_nonnegative(side, M, g, K, lam, eps, seed):
    geo = build_torus(1, side, nearest_neighbour_steps(1))
    p = ModelParams.exchangeable_model(M, g, K, lam)
    state = init_particles(geo, p, 1.0, eps)
    tr = run_particles(state, geo, p, 1.0, np.linspace(0, 1, 6), seed, replicates=5)
    assert np.all(tr.counts >= 0)
    again = run_particles(state, geo, p, 1.0, np.linspace(0, 1, 6), seed, replicates=5)
    assert_array_equal(tr.counts, again.counts)
