"""Open nearest-neighbour network on ``(l, r)`` fed by reservoirs at ``l`` and ``r``.

The stationary current profile solves

    lam(x)   = p lam(x-1) + q lam(x+1)      for l+1 < x < r-1
    lam(l+1) = p alpha(l) + q lam(l+2)
    lam(r-1) = p lam(r-2) + q alpha(r)

and has the closed form ``A (q/p)^(r-x) + B`` with ``lam(l) = alpha(l)``,
``lam(r) = alpha(r)``.  When ``lam < alpha`` on the interior the network is
positive recurrent with product stationary law ``theta_{lam(x)/alpha(x)}``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .equilibria import ProductMeasure
from .harris import HarrisEventStream, ReplicaSet, replica_seed
from .model import INFINITY, Configuration, Environment, JumpKernel, ModelError, RateFunction

RECURRENCE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class JacksonProfile:
    l: int
    r: int
    p: float
    alpha_l: float
    alpha_r: float
    sites: np.ndarray  # interior sites l+1..r-1
    alpha: np.ndarray  # alpha on the interior
    lam: np.ndarray  # profile on the interior
    recurrent: bool
    r_prime: int | None
    modified_env: Environment | None

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def slack(self) -> np.ndarray:
        return self.alpha - self.lam

    def residuals(self) -> np.ndarray:
        """Residuals of the bulk and boundary equations at every interior site."""
        full = np.concatenate([[self.alpha_l], self.lam, [self.alpha_r]])
        return full[1:-1] - (self.p * full[:-2] + self.q * full[2:])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site", "alpha", "lambda", "slack"])
            for x, a, lam in zip(self.sites, self.alpha, self.lam):
                w.writerow([int(x), f"{a:.17g}", f"{lam:.17g}", f"{a - lam:.17g}"])


def profile_closed_form(alpha_l: float, alpha_r: float, p: float, l: int, r: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rho = (1.0 - p) / p
    if rho == 0.0:
        return np.where(x < r, alpha_l, alpha_r) + 0.0 * x
    d = 1.0 - rho ** (r - l)
    return (alpha_r - alpha_l) / d * rho ** (r - x) + (alpha_l - alpha_r * rho ** (r - l)) / d


def solve_profile(env: Environment, p: float, l: int, r: int) -> JacksonProfile:
    """Current profile, recurrence and (if needed) the modified environment."""
    if not 0.5 < p <= 1.0:
        raise ModelError("profile needs p in (1/2, 1]")
    if r - l < 2:
        raise ModelError("need at least one interior site (r - l >= 2)")
    if not (env.contains(l) and env.contains(r)):
        raise ModelError("reservoir sites outside the environment window")
    sites = np.arange(l + 1, r)
    a = env.alpha[env.index(sites)]
    lam = profile_closed_form(env[l], env[r], p, l, r, sites)
    violating = lam >= a - RECURRENCE_TOL
    recurrent = not bool(np.any(violating))
    r_prime = mod = None
    if not recurrent:
        # first site where the profile exceeds the rate; ties count as exceeding
        r_prime = int(sites[np.argmax(violating)])
        new_rate = float(lam[np.argmax(violating)])
        mod = _override(env, r_prime, new_rate)
    return JacksonProfile(l, r, p, env[l], env[r], sites, a, lam, recurrent, r_prime, mod)


def _override(env: Environment, x: int, rate: float) -> Environment:
    """Environment with ``alpha(x)`` replaced; the new value may sit outside
    ``(c, 1]`` only through this reservoir site, so validation is bypassed."""
    a = env.alpha.copy()
    a[env.index(x)] = rate
    out = object.__new__(Environment)
    a.setflags(write=False)
    for k, v in (("left", env.left), ("alpha", a), ("c", env.c), ("slow_sites", env.slow_sites),
                 ("notes", env.notes + (f"reservoir rate at {x} set to profile value",))):
        object.__setattr__(out, k, v)
    return out


def invariant_measure(profile: JacksonProfile, g: RateFunction) -> ProductMeasure:
    """Product law with marginal ``theta_{lam(x)/alpha(x)}`` on ``(l, r)``."""
    if not profile.recurrent:
        raise ModelError("profile is not recurrent: no invariant probability measure")
    ratio = profile.lam / profile.alpha
    if np.any(ratio >= 1.0 - 1e-9):
        raise ModelError("marginal parameter too close to 1")
    return ProductMeasure(int(profile.sites[0]), ratio, g)


def locate_bottlenecks(env: Environment, epsilon: float) -> tuple[int, float]:
    """``A_eps = max{x <= 0: alpha(x) <= c + eps}`` and ``a_eps = min{x >= 0: ...}``
    (``+inf`` when no such site lies in the window)."""
    if epsilon <= 0:
        raise ModelError("epsilon must be positive")
    thr = env.c + epsilon
    sites = env.sites
    slow = env.alpha <= thr
    left = slow & (sites <= 0)
    if not np.any(left):
        raise ModelError("window too small for epsilon: no slow site on the negative axis "
                         "(the liminf condition guarantees one further left)")
    A = int(sites[left].max())
    right = slow & (sites >= 0)
    a = int(sites[right].min()) if np.any(right) else math.inf
    return A, a


def reservoir_sites(env: Environment, epsilon: float) -> tuple[int, int]:
    """``l = A_eps`` and ``r = a_eps`` or ``ceil(1/eps)`` when ``a_eps`` is infinite."""
    A, a = locate_bottlenecks(env, epsilon)
    r = a if math.isfinite(a) else int(math.ceil(1.0 / epsilon))
    return A, int(r)


# ---------------------------------------------------------------------------
# simulation audits
# ---------------------------------------------------------------------------


@dataclass
class StationarityReport:
    sites: np.ndarray
    mc_mean: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray
    replicas: int
    leak: int

    @property
    def z(self) -> np.ndarray:
        return (self.mc_mean - self.exact) / np.where(self.stderr > 0, self.stderr, np.inf)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(np.abs(self.mc_mean - self.exact) <= 3 * self.stderr))


def open_network_window(env: Environment, l: int, r: int) -> tuple[Environment, int, int]:
    return env.restrict(l, r), l, r


def stationarity_run(env: Environment, p: float, l: int, r: int, g: RateFunction, t: float, replicas: int,
                     seed: int) -> StationarityReport:
    """Start from the invariant law, run the open network to time ``t`` and
    compare per-site time-averaged occupancies with the stationary means."""
    prof = solve_profile(env, p, l, r)
    mu = invariant_measure(prof, g)
    sub = env.restrict(l, r)
    kernel = JumpKernel.nearest_neighbour(p)
    avgs = np.empty((replicas, prof.sites.size))
    leak = 0
    for i in range(replicas):
        ss = replica_seed(seed, i)
        init_seed, stream_seed = ss.spawn(2)
        occ = np.empty(sub.alpha.size, dtype=np.int64)
        occ[0] = occ[-1] = INFINITY
        occ[1:-1] = mu.sample_array(np.random.default_rng(init_seed), 1)[0]
        stream = HarrisEventStream(l, r, t, kernel, stream_seed)
        reps = ReplicaSet(stream, [sub], [occ], g, integrate_from=0.0)
        reps.advance(t)
        avgs[i] = reps.time_average()[0, 1:-1]
        leak += int(reps.leak.sum())
    mean = avgs.mean(axis=0)
    se = avgs.std(axis=0, ddof=1) / math.sqrt(replicas)
    return StationarityReport(prof.sites, mean, se, mu.means(), replicas, leak)


@dataclass
class SandwichReport:
    l: int
    r: int
    r_prime: int
    checks: int
    violations: int
    leak: int
    replicas: int


def sandwich_domination_audit(env: Environment, eta0: Configuration, epsilon: float, p: float, g: RateFunction,
                              t: float, replicas: int, seed: int, sample_times: int = 10,
                              independent_streams: bool = False) -> SandwichReport:
    """Pathwise check of ``eta^alpha <= etabar^alpha`` (everywhere) and
    ``etabar^alpha <= eta^{alpha'}`` on ``(l, r')`` for three coupled processes:
    the original one, the one with reservoirs at ``l`` and ``r'``, and the
    one in the modified environment.  With ``independent_streams`` the third
    process gets its own stream (negative control)."""
    l, r = reservoir_sites(env, epsilon)
    if not (env.contains(l) and env.contains(r)):
        raise ModelError("window does not contain the reservoirs")
    prof = solve_profile(env, p, l, r)
    r_prime = r if prof.recurrent else prof.r_prime
    env_mod = env if prof.recurrent else prof.modified_env
    kernel = JumpKernel.nearest_neighbour(p)
    base = np.asarray(eta0.occupancy, np.int64)
    bar = base.copy()
    bar[l - env.left] = INFINITY
    bar[r_prime - env.left] = INFINITY
    times = np.linspace(0, t, sample_times + 1)[1:]
    checks = violations = leak = 0
    inner = slice(l - env.left + 1, r_prime - env.left)
    for i in range(replicas):
        ss = replica_seed(seed, i)
        stream = HarrisEventStream(env.left, env.right, t, kernel, ss)
        if independent_streams:
            reps = ReplicaSet(stream, [env.alpha, env.alpha], [base, bar], g,
                              order_pairs=[(0, 1, env.left, env.right)])
            other = ReplicaSet(HarrisEventStream(env.left, env.right, t, kernel, ss.spawn(1)[0]),
                               [env_mod.alpha], [bar.copy()], g)
        else:
            reps = ReplicaSet(stream, [env.alpha, env.alpha, env_mod.alpha], [base, bar, bar.copy()], g,
                              order_pairs=[(0, 1, env.left, env.right), (1, 2, l + 1, r_prime - 1)])
            other = None
        for s in times:
            reps.advance(s)
            checks += 1
            if other is not None:
                other.advance(s)
                violations += int(np.any(reps.occ[1, inner] > other.occ[0, inner]))
        violations += int(reps.order_violations.sum())
        leak += int(reps.leak[0])
    return SandwichReport(l, r, r_prime, checks, violations, leak, replicas)
