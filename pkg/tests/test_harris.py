import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from zrplab.harris import (
    CurrentPath,
    HarrisEventStream,
    ReplicaSet,
    finite_propagation_probe,
    label_order_check,
    poisson_chi_square,
    poisson_race_bound,
    replica_seed,
    run_source_process,
    window_margin,
)
from zrplab.model import (
    INFINITY,
    Configuration,
    Environment,
    JumpKernel,
    ModelError,
    PowerLaw,
    build_environment_iid,
    capped_linear_rate,
    constant_rate,
    saturating_rate,
)

P1 = JumpKernel.nearest_neighbour(1.0)


def flat_env(window, a=1.0):
    return Environment(window[0], np.full(window[1] - window[0] + 1, a), 0.5)


def test_stream_replay_determinism(nn75):
    a = HarrisEventStream(-10, 10, 5.0, nn75, 3)
    b = HarrisEventStream(-10, 10, 5.0, nn75, 3)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.u, b.u) and np.array_equal(a.z, b.z)
    assert not np.array_equal(a.times, HarrisEventStream(-10, 10, 5.0, nn75, 4).times)


def test_event_counts_poisson():
    s = HarrisEventStream(0, 9999, 5.0, P1, 11)
    assert poisson_chi_square(s) > 0.01


def test_interarrival_gaps_exponential():
    s = HarrisEventStream(0, 199, 50.0, P1, 5)
    gaps = np.concatenate([np.diff(np.concatenate([[0.0], s.site_times(x)])) for x in range(200)])
    assert stats.kstest(gaps, "expon").pvalue > 0.01
    assert np.all(np.diff(s.site_times(17)) > 0)


def test_marks_and_displacements(nn75):
    s = HarrisEventStream(0, 999, 10.0, nn75, 2)
    assert np.all((s.u > 0) & (s.u <= 1))
    assert abs(np.mean(s.z == 1) - 0.75) < 4 * math.sqrt(0.75 * 0.25 / len(s))


def test_empty_stays_empty(env40, nn75):
    s = HarrisEventStream(env40.left, env40.right, 20.0, nn75, 1)
    reps = ReplicaSet(s, [env40], [Configuration.zeros(env40.window)], constant_rate())
    reps.advance(20.0)
    assert reps.occ.sum() == 0


def test_single_particle_poisson_position():
    t, n = 4.0, 10_000
    win = (0, 40)
    env = flat_env(win)
    occ = np.zeros(41, np.int64)
    occ[0] = 1
    pos = np.empty(n)
    for i in range(n):
        s = HarrisEventStream(*win, t, P1, replica_seed(99, i))
        reps = ReplicaSet(s, [env], [occ], constant_rate())
        reps.advance(t)
        assert reps.leak[0] == 0
        pos[i] = np.flatnonzero(reps.occ[0])[0]
    assert abs(pos.mean() - t) < 3 * math.sqrt(t / n)


def test_replica_replay_bitwise(env40, nn75, rng):
    occ = rng.integers(0, 4, env40.alpha.size)
    snaps = []
    for _ in range(2):
        s = HarrisEventStream(env40.left, env40.right, 10.0, nn75, 77)
        reps = ReplicaSet(s, [env40], [occ], saturating_rate())
        run = []
        for t in np.linspace(0.5, 10.0, 20):
            reps.advance(t)
            run.append(reps.occ.copy())
        snaps.append(np.array(run))
    assert np.array_equal(snaps[0], snaps[1])


cfg_st = st.lists(st.integers(0, 5), min_size=20, max_size=20)


@given(cfg_st, cfg_st, st.integers(0, 2**32), st.sampled_from([0.6, 0.75, 1.0]),
       st.sampled_from(["constant", "capped", "saturating"]))
def test_attractiveness_pathwise(a, b, seed, p, gname):
    g = {"constant": constant_rate(), "capped": capped_linear_rate(3), "saturating": saturating_rate()}[gname]
    env = build_environment_iid(PowerLaw(0.5, 2.0), (0, 19), seed)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    kernel = JumpKernel.nearest_neighbour(p)
    s = HarrisEventStream(0, 19, 5.0, kernel, seed)
    reps = ReplicaSet(s, [env, env], [lo, hi], g, order_pairs=[(0, 1, 0, 19)])
    reps.advance(5.0)
    assert reps.order_violations[0] == 0
    assert np.all(reps.occ[0] <= reps.occ[1])


@given(cfg_st, st.integers(0, 2**32))
def test_conservation_with_leak_ledger(a, seed):
    env = build_environment_iid(PowerLaw(0.5, 1.0), (0, 19), seed)
    s = HarrisEventStream(0, 19, 3.0, JumpKernel((1, 2, -1), (0.4, 0.3, 0.3)), seed)
    reps = ReplicaSet(s, [env], [np.array(a)], constant_rate())
    for t in (1.0, 2.0, 3.0):
        reps.advance(t)
        assert reps.occ.sum() + reps.leak[0] == sum(a)


def test_closed_window_conserves_mass(nn75):
    # particles start far from the edges; with a wide margin nothing leaks
    t = 5.0
    m = window_margin(t)
    win = (-m, 10 + m)
    env = flat_env(win, 0.9)
    occ = np.zeros(win[1] - win[0] + 1, np.int64)
    occ[m : m + 11] = 3
    reps = ReplicaSet(HarrisEventStream(*win, t, nn75, 8), [env], [occ], constant_rate())
    reps.advance(t)
    assert reps.leak[0] == 0 and reps.occ.sum() == 33


def test_infinity_sites_persist(nn75):
    win = (0, 30)
    env = flat_env(win)
    occ = np.zeros(31, np.int64)
    occ[0] = INFINITY
    occ[30] = INFINITY
    reps = ReplicaSet(HarrisEventStream(*win, 20.0, nn75, 4), [env], [occ], constant_rate())
    reps.advance(20.0)
    assert reps.occ[0, 0] == INFINITY and reps.occ[0, 30] == INFINITY
    assert 0 < reps.occ[0, 1:30].sum() < INFINITY


def test_source_process_at_time_zero():
    env = flat_env((-10, 10))
    cfg, _ = run_source_process(env, P1, constant_rate(), -1.0, 0.0, 1)
    # the returned window starts at the (width-one) source block
    assert cfg == Configuration.source_block((0, 10), 0)


def test_source_emission_rate():
    # homogeneous rates with p = 1: every clock ring at the source emits, so the
    # mass right of the source is exactly Poisson(t)
    t, n = 0.1, 20_000
    env = flat_env((-5, 10))
    beta = -10.0
    x_t = math.floor(beta * t)
    mass = np.empty(n)
    for i in range(n):
        cfg, reps = run_source_process(env, P1, constant_rate(), beta, t, replica_seed(5, i))
        mass[i] = cfg.total_mass(x_t + 1, env.right)
        assert cfg[x_t] == INFINITY
    assert abs(mass.mean() - t) < 3 * math.sqrt(t / n)


def test_source_window_errors():
    env = flat_env((-3, 10))
    with pytest.raises(ModelError):
        run_source_process(env, P1, constant_rate(), -1.0, 10.0, 1)
    with pytest.raises(ModelError):
        run_source_process(env, P1, constant_rate(), 1.0, 1.0, 1)


def test_path_positions():
    p = CurrentPath.linear(5, -0.5, 10.0)
    assert p.position(0.0) == 5 and p.position(2.0) == 4 and p.position(10.0) == 0
    with pytest.raises(ModelError):
        CurrentPath(0, (1.0, 0.5), (1, 1))


# finite propagation


def propagation_setup(extra):
    win = (-100, 100)
    env = flat_env(win)
    # with g = 1{n >= 1} a discrepancy only moves through empty sites, so the
    # common part is empty and the extra mass sits at x = -10 and to its left
    base = np.zeros(201, np.int64)
    base[95:106:5] = 1
    other = base.copy()
    other[:91] += extra
    return env, Configuration(-100, base), Configuration(-100, other)


def test_propagation_identical_configurations():
    env, a, _ = propagation_setup(0)
    rep = finite_propagation_probe(a, a, (-10, 10), 3.0, 2.0, 50, env, P1, constant_rate())
    assert rep.violations == 0


def test_propagation_far_disagreement():
    env, a, b = propagation_setup(5)
    rep = finite_propagation_probe(a, b, (-10, 70), 3.0, 10.0, 100, env, P1, constant_rate())
    assert not rep.degenerate and rep.violations == 0
    assert poisson_race_bound(3.0, 10.0) < 1e-6


def test_propagation_slow_speed_violations_decrease():
    env, a, b = propagation_setup(20)
    rates = [finite_propagation_probe(a, b, (-10, 20), W, 2.0, 400, env, P1, constant_rate(), seed=3).rate
             for W in (1.01, 1.5, 2.5)]
    assert rates[0] > 0.1
    assert rates[0] > rates[1] > rates[2]


def test_propagation_degenerate_interval():
    env, a, b = propagation_setup(0)
    rep = finite_propagation_probe(a, b, (-5, 5), 3.0, 10.0, 10, env, P1, constant_rate())
    assert rep.degenerate


# labelled particles


def test_labels_identical_replicas(env40, nn75, rng):
    occ = Configuration(env40.left, rng.integers(0, 3, env40.alpha.size))
    ok, tr = label_order_check(occ, occ, 0, 0, env40, nn75, constant_rate(), 10.0, 1)
    assert ok and tr.violations == 0


def test_labels_extra_particle(nn75):
    rng = np.random.default_rng(0)
    t = 5.0
    m = window_margin(t)
    win = (-10 - m, 10 + m)
    for i in range(200):
        env = build_environment_iid(PowerLaw(0.5, 2.0), win, i)
        occ = np.zeros(win[1] - win[0] + 1, np.int64)
        occ[m : m + 21] = rng.integers(0, 4, 21)
        ref = int(rng.integers(-10, 11))
        extra = occ.copy()
        extra[ref - win[0]] += 1
        ok, tr = label_order_check(Configuration(win[0], extra), Configuration(win[0], occ), ref, 1, env, nn75,
                                   constant_rate(), t, replica_seed(4, i))
        assert ok, i
        assert tr.leak.sum() == 0


def test_labels_fault_detected(nn75):
    win = (-30, 30)
    env = flat_env(win, 0.9)
    occ = np.zeros(61, np.int64)
    occ[25:36] = 4
    results = [label_order_check(Configuration(-30, occ), Configuration(-30, occ), 0, 0, env, nn75,
                                 constant_rate(), 5.0, s, fault=True)[0] for s in range(5)]
    assert not any(results)


def test_label_stream_mismatch(env40, nn75):
    occ = Configuration.zeros(env40.window)
    other = HarrisEventStream(0, 5, 1.0, nn75, 1)
    with pytest.raises(ModelError):
        label_order_check(occ, occ, 0, 0, env40, nn75, constant_rate(), 1.0, 1, stream=other)
