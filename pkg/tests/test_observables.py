
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zrplab.equilibria import LocalObservable, ProductMeasure, parse_observables
from zrplab.harris import CurrentPath, HarrisEventStream, ReplicaSet, window_margin
from zrplab.model import (
    INFINITY,
    Configuration,
    Environment,
    JumpKernel,
    ModelError,
    PowerLaw,
    build_environment_iid,
    constant_rate,
    saturating_rate,
)
from zrplab.observables import (
    INFINITE_HEIGHT,
    attractiveness_audit,
    compare_to_product_measure,
    source_comparison_audit,
    current,
    current_comparison_audit,
    height_F,
    height_profile,
    tail_identity_value,
    write_report,
)

P1 = JumpKernel.nearest_neighbour(1.0)


def empty_stream(win, kernel=P1):
    s = HarrisEventStream(win[0], win[1], 1.0, kernel, 0)
    s.times, s.sites, s.u, s.z = s.times[:0], s.sites[:0], s.u[:0], s.z[:0]
    return s


def test_current_without_events():
    win = (0, 5)
    env = Environment(0, np.ones(6), 0.5)
    reps = ReplicaSet(empty_stream(win), [env], [np.array([1, 2, 0, 0, 3, 0])], constant_rate(),
                      paths=[CurrentPath(2)])
    reps.advance(1.0)
    assert current(reps) == 0


def test_single_jump_across_path():
    win = (0, 3)
    env = Environment(0, np.ones(4), 0.5)
    s = empty_stream(win)
    s.times, s.sites, s.u, s.z = np.array([0.5]), np.array([0]), np.array([0.1]), np.array([1])
    reps = ReplicaSet(s, [env], [np.array([1, 0, 0, 0])], constant_rate(), paths=[CurrentPath(0)])
    reps.advance(1.0)
    assert current(reps) == 1 and tail_identity_value(reps, 0, 0) == 1


def test_path_jump_adjustments():
    occ = np.array([4, 1, 7, 2, 5])
    env = Environment(0, np.ones(5), 0.5)
    right = ReplicaSet(empty_stream((0, 4)), [env], [occ], constant_rate(),
                       paths=[CurrentPath(1, [0.5], [1])])
    right.advance(1.0)
    # moving the bond (1,2) to (2,3) drops site 2 from the tail
    assert current(right) == -7 == tail_identity_value(right, 0, 0)
    left = ReplicaSet(empty_stream((0, 4)), [env], [occ], constant_rate(),
                      paths=[CurrentPath(2, [0.5], [-1])])
    left.advance(1.0)
    assert current(left) == 7 == tail_identity_value(left, 0, 0)


def test_current_requires_path(env40, nn75):
    reps = ReplicaSet(empty_stream(env40.window, nn75), [env40], [Configuration.zeros(env40.window)],
                      constant_rate())
    with pytest.raises(ModelError):
        current(reps)


@given(st.lists(st.integers(0, 4), min_size=16, max_size=16), st.integers(0, 2**32),
       st.floats(-1.5, 1.5), st.integers(4, 11))
def test_tail_identity_after_every_event(occ, seed, speed, start):
    win = (0, 15)
    env = build_environment_iid(PowerLaw(0.5, 2.0), win, seed)
    kernel = JumpKernel.nearest_neighbour(0.7)
    t = 3.0
    s = HarrisEventStream(*win, t, kernel, seed)
    paths = [CurrentPath(start), CurrentPath.linear(start, speed, t)]
    reps = ReplicaSet(s, [env], [np.array(occ)], saturating_rate(), paths=paths)
    for te in s.times:
        reps.advance(te)
        if reps.leak[0]:
            break
        for p in range(2):
            assert current(reps, 0, p) == tail_identity_value(reps, 0, p)
    assert reps.path_errors == 0


def test_mirror_replay_negates_current(rng):
    win = (-15, 15)
    env = build_environment_iid(PowerLaw(0.5, 2.0), win, 2)
    kernel = JumpKernel.nearest_neighbour(0.7)
    mirror_kernel = JumpKernel((-1, 1), (0.7, 0.3))
    occ = np.zeros(31, np.int64)
    occ[10:21] = rng.integers(0, 4, 11)
    s = HarrisEventStream(*win, 3.0, kernel, 5)
    m = HarrisEventStream(*win, 3.0, mirror_kernel, 5)
    m.times, m.u = s.times, s.u
    m.sites, m.z = (30 - s.sites), -s.z
    env_m = Environment(win[0], env.alpha[::-1], env.c)
    for b in (-2, 0, 3):
        a = ReplicaSet(s, [env], [occ], constant_rate(), paths=[CurrentPath(b)])
        r = ReplicaSet(m, [env_m], [occ[::-1].copy()], constant_rate(), paths=[CurrentPath(-b - 1)])
        a.advance(3.0)
        r.advance(3.0)
        assert a.leak[0] == r.leak[0] == 0
        assert current(r) == -current(a)


# height function


def test_height_basic():
    zero = Configuration.zeros((-5, 5))
    assert all(height_F(0, zero, x) == 0 for x in range(-5, 6))
    d1 = Configuration(-5, np.eye(11, dtype=np.int64)[6])
    assert height_F(0, d1, 1) == 1 and height_F(0, d1, 0) == 0
    inf = Configuration(-5, np.where(np.arange(11) == 2, INFINITY, 0))
    assert height_F(0, inf, -3) == -INFINITE_HEIGHT


@given(st.lists(st.integers(0, 9), min_size=12, max_size=12), st.integers(-6, 5), st.integers(-6, 5),
       st.integers(-6, 5))
def test_height_telescoping(occ, y, z, u):
    if y >= z:
        y, z = z, y + 0
    if y == z:
        return
    zeta = Configuration(-6, np.array(occ))
    lhs = height_F(y, zeta, u) - height_F(z, zeta, u)
    # direct summation; the boundary site u = z contributes as well
    rhs = sum(zeta[x] for x in range(y + 1, z + 1)) + (zeta[u] if y < u <= z else 0)
    assert lhs == rhs


@given(st.lists(st.integers(0, 9), min_size=12, max_size=12), st.integers(-8, 8))
def test_height_profile_matches_definition(occ, x0):
    zeta = Configuration(-6, np.array(occ))
    prof = height_profile(x0, zeta.occupancy, -6)
    assert list(prof) == [height_F(x0, zeta, x) for x in range(-6, 6)]


# pathwise audits


def audit_setup(i, width=40, t=20.0):
    rng = np.random.default_rng(i)
    m = window_margin(t)
    win = (-width // 2 - m, width // 2 + m)
    env = build_environment_iid(PowerLaw(0.5, 2.0), win, i)
    a = np.zeros(win[1] - win[0] + 1, np.int64)
    b = np.zeros_like(a)
    a[m : m + width] = rng.integers(0, 4, width)
    b[m : m + width] = rng.integers(0, 4, width)
    return rng, env, Configuration(win[0], a), Configuration(win[0], b)


def test_audits_identical_configurations(nn75):
    _, env, a, _ = audit_setup(0)
    res = current_comparison_audit(a, a, CurrentPath(0), env, nn75, constant_rate(), 20.0, 1)
    assert res.ok and res.lhs == 0 and res.rhs == 0


@pytest.mark.parametrize("i", range(25))
def test_audits_random_instances(i, nn75):
    rng, env, a, b = audit_setup(i)
    g = constant_rate()
    lo = Configuration(a.left, np.minimum(a.occupancy, b.occupancy))
    hi = Configuration(a.left, np.maximum(a.occupancy, b.occupancy))
    assert attractiveness_audit(lo, hi, env, nn75, g, 20.0, i).ok
    path = CurrentPath.linear(int(rng.integers(-10, 10)), float(rng.uniform(-1, 1)), 20.0)
    res = current_comparison_audit(a, b, path, env, nn75, g, 20.0, i)
    assert res.ok and res.leak == 0
    y = int(rng.integers(-20, 20))
    z = int(rng.integers(y, 20))
    res = source_comparison_audit(a, y, z, env, nn75, g, 20.0, i)
    assert res.ok and res.leak == 0


def test_attractiveness_audit_rejects_unordered(nn75):
    _, env, a, b = audit_setup(1)
    with pytest.raises(ModelError):
        attractiveness_audit(a, b, env, nn75, constant_rate(), 1.0, 0)


# comparison with product measures


def test_self_consistency_against_measure(rng):
    g = constant_rate()
    mu = ProductMeasure(0, rng.uniform(0.2, 0.8, 30), g)
    obs = parse_observables([(x, k, p) for x in range(30) for k, p in (("threshold", 1), ("min_cap", 3))])
    rows = compare_to_product_measure(mu.sample_array(rng, 4000), 0, mu, obs)
    inside = np.mean([abs(r.z) <= 3 for r in rows])
    assert inside >= 0.95
    assert all(r.passes_upper() for r in rows if r.z <= 3)


def test_empty_ensemble_below_measure():
    mu = ProductMeasure(0, np.array([0.5]), constant_rate())
    rows = compare_to_product_measure(np.zeros((10, 1), np.int64), 0, mu,
                                      [LocalObservable.single(0, "threshold", 1)])
    assert rows[0].mc_mean == 0 and rows[0].passes_upper() and not rows[0].passes_lower()


def test_observable_outside_measure():
    mu = ProductMeasure(0, np.array([0.5]), constant_rate())
    with pytest.raises(ModelError):
        compare_to_product_measure(np.zeros((3, 2), np.int64), 0, mu, [LocalObservable.single(1, "threshold", 1)])


def test_report_csv(tmp_path, rng):
    mu = ProductMeasure(0, np.array([0.5, 0.2]), constant_rate())
    rows = compare_to_product_measure(mu.sample_array(rng, 50), 0, mu,
                                      [LocalObservable.single(1, "min_cap", 2)])
    write_report(rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "observable,mc_mean,stderr,exact,z" and len(lines) == 2
