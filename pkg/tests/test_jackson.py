import math

import numpy as np
import pytest

from zrplab.experiments import jackson_residual_check
from zrplab.jackson import (
    invariant_measure,
    locate_bottlenecks,
    profile_closed_form,
    reservoir_sites,
    sandwich_domination_audit,
    solve_profile,
    stationarity_run,
)
from zrplab.model import (
    Configuration,
    Environment,
    ModelError,
    PowerLaw,
    build_environment_iid,
    build_environment_with_slow_sites,
    constant_rate,
    slow_site_schedule,
)

C = 0.5


def dense_solve(alpha_l, alpha_r, alpha_int, p):
    """Oracle: the tridiagonal system written out as a dense matrix."""
    n = alpha_int.size
    q = 1 - p
    A = np.eye(n)
    b = np.zeros(n)
    for i in range(n):
        if i > 0:
            A[i, i - 1] = -p
        else:
            b[i] += p * alpha_l
        if i < n - 1:
            A[i, i + 1] = -q
        else:
            b[i] += q * alpha_r
    return np.linalg.solve(A, b)


def env_from(alpha, left):
    return Environment(left, np.asarray(alpha, float), C)


def test_one_site_network():
    env = env_from([0.8, 0.95, 0.9], 0)
    prof = solve_profile(env, 0.75, 0, 2)
    assert prof.lam[0] == pytest.approx(0.825, abs=1e-15)
    assert prof.recurrent


def test_totally_asymmetric_profile_is_constant():
    env = build_environment_iid(PowerLaw(C, 2), (-5, 5), 1)
    prof = solve_profile(env, 1.0, -5, 5)
    assert np.all(prof.lam == env[-5])


def test_closed_form_matches_dense_solve():
    rng = np.random.default_rng(0)
    for _ in range(50):
        env = build_environment_iid(PowerLaw(C, 1), (-10, 10), int(rng.integers(2**32)))
        prof = solve_profile(env, 0.7, -10, 10)
        oracle = dense_solve(env[-10], env[10], env.alpha[1:-1], 0.7)
        assert np.max(np.abs(prof.lam - oracle)) < 1e-12


def test_residuals_random_instances():
    worst, dev = jackson_residual_check(1000, seed=5)
    assert worst <= 1e-12 and dev <= 1e-12


def test_profile_bracketed_by_reservoirs():
    rng = np.random.default_rng(1)
    for _ in range(200):
        l, r = -int(rng.integers(1, 15)), int(rng.integers(1, 15))
        al, ar = rng.uniform(0.51, 1, 2)
        p = rng.uniform(0.51, 1)
        lam = profile_closed_form(al, ar, p, l, r, np.arange(l + 1, r))
        assert np.all(lam >= min(al, ar) - 1e-15) and np.all(lam <= max(al, ar) + 1e-15)
        higher = profile_closed_form(al + 0.01, ar, p, l, r, np.arange(l + 1, r))
        assert np.all(higher > lam)


def test_invalid_inputs():
    env = env_from(np.ones(5), 0)
    with pytest.raises(ModelError):
        solve_profile(env, 0.5, 0, 4)
    with pytest.raises(ModelError):
        solve_profile(env, 0.8, 0, 1)


def test_invariant_measure_geometric_means():
    env = env_from([0.6, 0.9, 0.9, 0.9, 0.9, 0.7], 0)
    prof = solve_profile(env, 1.0, 0, 5)
    mu = invariant_measure(prof, constant_rate())
    assert np.allclose(mu.params, 0.6 / 0.9)
    assert np.allclose(mu.means(), 2.0)


def test_tie_is_not_recurrent():
    env = env_from([0.9, 0.9, 0.95, 0.8, 1.0], 0)
    prof = solve_profile(env, 1.0, 0, 4)
    assert not prof.recurrent and prof.r_prime == 1
    assert prof.modified_env[1] == pytest.approx(0.9)
    with pytest.raises(ModelError):
        invariant_measure(prof, constant_rate())


def test_first_violation_site():
    env = env_from([0.95, 0.99, 0.9, 0.6, 0.7, 1.0], 0)
    prof = solve_profile(env, 0.8, 0, 5)
    lam = prof.lam
    assert not prof.recurrent
    first = int(prof.sites[np.argmax(lam > env.alpha[1:-1])])
    assert prof.r_prime == first == 2
    assert prof.modified_env[2] == pytest.approx(lam[1])
    assert prof.modified_env[3] == env[3]


def test_marginal_parameter_near_one_rejected():
    env = env_from([0.9, 0.9 + 1e-11, 1.0], 0)
    prof = solve_profile(env, 1.0, 0, 2)
    assert prof.recurrent
    with pytest.raises(ModelError):
        invariant_measure(prof, constant_rate())


def slow_env(window=(-60, 60)):
    left = window[0]
    alpha = np.full(window[1] - left + 1, 1.0)
    sites = np.arange(window[0], window[1] + 1)
    alpha[sites <= 0] = C + 1 / (np.abs(sites[sites <= 0]) + 2)
    return Environment(left, alpha, C)


def test_bottlenecks_direct_scan():
    env = slow_env()
    for eps in (0.3, 0.1, 0.05, 0.021):
        A, a = locate_bottlenecks(env, eps)
        scan = max(x for x in range(-60, 1) if env[x] <= C + eps)
        assert A == scan == -math.ceil(1 / eps - 2)
        assert math.isinf(a)
    A, a = locate_bottlenecks(env, 1 - C)
    assert A == 0 and a == 0


def test_bottleneck_missing():
    env = env_from(np.ones(10), -5)
    with pytest.raises(ModelError, match="window too small"):
        locate_bottlenecks(env, 0.1)
    assert reservoir_sites(slow_env(), 0.1)[1] == 10


def test_profile_near_origin_tends_to_c():
    env = slow_env((-2000, 1200))
    prev = math.inf
    for eps in (0.1, 0.01, 0.001):
        l, r = reservoir_sites(env, eps)
        lam = profile_closed_form(env[l], env[r], 0.75, l, r, np.arange(0, 6))
        err = np.max(np.abs(lam - C))
        assert err < prev
        prev = err
    assert prev < 2e-3


def test_stationarity_small_run():
    env = build_environment_iid(PowerLaw(C, 2), (0, 11), 3)
    env = env.with_rates({0: 0.51, 11: 0.52})
    rep = stationarity_run(env, 0.75, 0, 11, constant_rate(), 50.0, 100, 1)
    assert rep.leak == 0
    assert rep.pass_fraction >= 0.8
    assert np.all(np.abs(rep.z) < 5)


def sandwich_env():
    base = build_environment_iid(PowerLaw(C, 2), (-400, 400), 4)
    sched = slow_site_schedule("linear", C, 40, n_min=14)
    return build_environment_with_slow_sites(base, sched)


def test_sandwich_empty_initial():
    env = sandwich_env()
    rep = sandwich_domination_audit(env, Configuration.zeros(env.window), 0.051, 0.75, constant_rate(), 20.0, 5, 1)
    assert rep.violations == 0 and rep.l == -5


def test_sandwich_random_critical_density():
    env = sandwich_env()
    rng = np.random.default_rng(8)
    occ = np.zeros(801, np.int64)
    occ[300:501] = rng.geometric(1 / 2.5, 201) - 1  # mean 1.5
    rep = sandwich_domination_audit(env, Configuration(-400, occ), 0.051, 0.75, constant_rate(), 100.0, 100, 2)
    assert rep.leak == 0
    assert rep.violations == 0
    assert rep.checks == 1000


def test_sandwich_negative_control():
    env = sandwich_env()
    rng = np.random.default_rng(8)
    occ = np.zeros(801, np.int64)
    occ[300:501] = rng.geometric(1 / 2.5, 201) - 1
    rep = sandwich_domination_audit(env, Configuration(-400, occ), 0.051, 0.75, constant_rate(), 50.0, 10, 2,
                                    independent_streams=True)
    assert rep.violations > 0


def test_profile_csv(tmp_path):
    prof = solve_profile(env_from([0.8, 0.95, 0.9], 0), 0.75, 0, 2)
    prof.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "site,alpha,lambda,slack" and lines[1].startswith("1,0.94999")
