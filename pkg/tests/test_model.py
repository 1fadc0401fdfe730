import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from zrplab.model import (
    INFINITY,
    Configuration,
    Environment,
    JumpKernel,
    LiminfWarning,
    ModelError,
    PointMixture,
    PowerLaw,
    RateFunction,
    build_environment_iid,
    build_environment_with_slow_sites,
    capped_linear_rate,
    constant_rate,
    disorder_law_from_dict,
    normalize_rate_function,
    rate_function_from_spec,
    saturating_rate,
    slow_site_schedule,
)


# rate functions


def test_constant_rate_unchanged_by_normalisation():
    g = normalize_rate_function([0, 1])
    assert np.array_equal(g.values, constant_rate().values)
    assert g(0) == 0 and g(1) == 1 and g(10**6) == 1


def test_capped_linear_normalised():
    g = normalize_rate_function([min(n, 3) for n in range(4)])
    assert np.allclose(g.values, [0, 1 / 3, 2 / 3, 1])
    assert g(7) == 1.0


def test_saturating_rate_increments_nonincreasing():
    g = saturating_rate()
    n = np.arange(1, 30)
    assert np.allclose(g(n), 1 - 2.0**-n, atol=1e-13)
    assert g.increments_nonincreasing
    # min(n,3)/3 has increments 1/3,1/3,1/3,0: nonincreasing
    assert capped_linear_rate(3).increments_nonincreasing


def test_rate_at_infinity_is_limit():
    assert saturating_rate()(int(INFINITY)) == 1.0


@pytest.mark.parametrize("raw", [[0, 2, 1], [0, 0, 1], [1, 2], [0]])
def test_rate_table_rejected(raw):
    with pytest.raises(ModelError):
        normalize_rate_function(raw)


def test_rate_function_roundtrip():
    for kind in ("constant", "capped_linear_2", "saturating"):
        g = rate_function_from_spec(kind)
        assert RateFunction.from_dict(g.to_dict()) == g


# kernels


def test_nearest_neighbour_kernel_flags():
    k = JumpKernel.nearest_neighbour(0.7)
    assert k.is_nearest_neighbour and not k.is_totally_asymmetric
    assert k.drift == 2 * 0.7 - 1 and k.p == 0.7 and k.q == pytest.approx(0.3)


def test_totally_asymmetric_kernel():
    k = JumpKernel((1, 2), (0.5, 0.5))
    assert k.is_totally_asymmetric and not k.is_nearest_neighbour
    assert k.drift == 1.5 and k.max_range == 2


@pytest.mark.parametrize("z,p", [((1, -1), (0.6, 0.5)), ((1, 1), (0.5, 0.5)), ((0,), (1.0,)), ((1,), (1.2,))])
def test_kernel_rejected(z, p):
    with pytest.raises(ModelError):
        JumpKernel(z, p)


@given(st.floats(0.5001, 1.0))
def test_kernel_drift_consistency(p):
    k = JumpKernel.nearest_neighbour(p)
    assert k.drift == 2 * k.p - 1
    assert JumpKernel.from_dict(k.to_dict()) == k


def test_kernel_sampling_frequencies(rng):
    k = JumpKernel((1, 2, -1), (0.5, 0.3, 0.2))
    z = k.sample(rng, 200_000)
    for zi, pi in zip(k.displacements, k.probabilities):
        assert abs(np.mean(z == zi) - pi) < 4 * np.sqrt(pi * (1 - pi) / z.size)


# disorder laws and environments


def test_point_mass_environment_warns():
    with pytest.warns(LiminfWarning):
        env = build_environment_iid(PointMixture((0.8,), (1.0,), 0.5), (-5, 5), 1)
    assert np.all(env.alpha == 0.8) and env.notes


def test_power_law_mean_matches_quadrature():
    c, n = 0.5, 10**6
    env = build_environment_iid(PowerLaw(c, 1.0), (-n + 1, 0), 3)
    dens = lambda a: 2 * (a - c) / (1 - c) ** 2
    mean, _ = integrate.quad(lambda a: a * dens(a), c, 1)
    var, _ = integrate.quad(lambda a: (a - mean) ** 2 * dens(a), c, 1)
    assert mean == pytest.approx(5 / 6, abs=1e-12)
    assert abs(env.alpha.mean() - mean) < 3 * np.sqrt(var / n)


@pytest.mark.parametrize("k", [0.0, 1.0, 2.0])
def test_power_law_quadrature_integrates_moments(k):
    law = PowerLaw(0.5, k)
    nodes, w = law.quadrature()
    dens = lambda a: (k + 1) * (a - 0.5) ** k / 0.5 ** (k + 1)
    for f in (lambda a: a, lambda a: a**3, lambda a: 1 / (a - 0.25)):
        ref, _ = integrate.quad(lambda a: f(a) * dens(a), 0.5, 1, epsabs=1e-14)
        assert np.sum(w * f(nodes)) == pytest.approx(ref, rel=1e-12)


def test_law_outside_range_rejected():
    with pytest.raises(ModelError):
        PointMixture((0.4,), (1.0,), 0.5)
    with pytest.raises(ModelError):
        disorder_law_from_dict({"law": "point", "c": 0.5, "atoms": [1.2]})


def test_environment_determinism():
    a = build_environment_iid(PowerLaw(0.5, 2), (-100, 0), 42)
    b = build_environment_iid(PowerLaw(0.5, 2), (-100, 0), 42)
    assert a == b
    assert Environment.from_dict(a.to_dict()) == a


def test_environment_rejects_rates():
    with pytest.raises(ModelError):
        Environment(0, np.array([0.5, 0.9]), 0.5)
    with pytest.raises(ModelError):
        Environment(0, np.array([1.01]), 0.5)


def test_slow_sites_consecutive():
    base = Environment(-50, np.ones(51), 0.5)
    sched = [(-k, 0.5 + 1 / (k + 2)) for k in range(1, 51)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        env = build_environment_with_slow_sites(base, sched)
    assert env.slow_sites == tuple(range(-1, -51, -1))
    assert env[-3] == pytest.approx(0.5 + 1 / 5)


def test_slow_sites_geometric_ratio_warns():
    xs = sorted({-int(1.1**k) for k in range(10, 60)}, reverse=True)
    base = Environment(xs[-1], np.ones(-xs[-1] + 1), 0.5)
    sched = [(x, 0.5 + 1 / (n + 3)) for n, x in enumerate(xs)]
    ratios = np.array(xs[1:]) / np.array(xs[:-1])
    assert ratios[-5:].mean() == pytest.approx(1.1, abs=0.02)
    with pytest.warns(LiminfWarning):
        build_environment_with_slow_sites(base, sched)


def test_empty_schedule_returns_base():
    base = Environment(-3, np.ones(4), 0.5)
    assert build_environment_with_slow_sites(base, []) is base
    assert base.slow_sites is None


@pytest.mark.parametrize("sched", [[(-1, 0.9), (-1, 0.8)], [(-1, 0.5)], [(1, 0.9)]])
def test_bad_schedule_rejected(sched):
    base = Environment(-5, np.ones(7), 0.5)
    with pytest.raises(ModelError):
        build_environment_with_slow_sites(base, sched)


def test_slow_site_schedule_forms():
    lin = slow_site_schedule("linear", 0.5, 5)
    assert [x for x, _ in lin] == [-1, -2, -3, -4, -5]
    assert lin[0][1] == pytest.approx(0.5 + 1 / 3)
    quad = slow_site_schedule("quadratic", 0.5, 203, n_min=200)
    assert [x for x, _ in quad] == [-1, -4, -9, -16]
    assert quad[0][1] == pytest.approx(0.5 + 1 / 202)


# configurations

occ_st = st.lists(st.integers(0, 6), min_size=3, max_size=12)


@given(occ_st, st.data())
def test_jump_roundtrip(occ, data):
    cfg = Configuration(-2, np.array(occ))
    sites = [x for x in range(cfg.left, cfg.right + 1) if cfg[x] > 0]
    if not sites:
        return
    x = data.draw(st.sampled_from(sites))
    y = data.draw(st.integers(cfg.left, cfg.right).filter(lambda s: s != x))
    assert cfg.jump(x, y).jump(y, x) == cfg


def test_infinity_conventions():
    cfg = Configuration(0, np.array([INFINITY, 0, 2, INFINITY]))
    a = cfg.jump(0, 1)
    assert a[0] == INFINITY and a[1] == 1
    b = cfg.jump(2, 3)
    assert b[2] == 1 and b[3] == INFINITY
    assert cfg.jump(0, 3) == cfg
    with pytest.raises(ModelError):
        cfg.total_mass()
    assert cfg.total_mass(1, 2) == 2
    assert list(cfg.infinite_sites) == [0, 3]


@given(occ_st)
def test_configuration_serialisation(occ):
    occ = np.array(occ, np.int64)
    occ[0] = INFINITY
    cfg = Configuration(5, occ)
    assert Configuration.from_dict(cfg.to_dict()) == cfg


def test_source_block():
    cfg = Configuration.source_block((-3, 3), 0)
    assert list(cfg.occupancy == INFINITY) == [True] * 4 + [False] * 3
