"""Scenario runners producing verdict tables.

Every runner takes a :class:`~zrplab.scenario.Scenario` and returns an
:class:`ExperimentResult` whose verdict rows carry the seed set, window,
leak counter, replica count and standard error.  Rows with ``passed=None``
are informational.  A row with a nonzero leak counter never passes.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import flux
from .equilibria import LocalObservable, ProductMeasure
from .harris import (
    CurrentPath,
    HarrisEventStream,
    ReplicaSet,
    finite_propagation_probe,
    label_order_check,
    poisson_race_bound,
    replica_seed,
    source_window,
    window_margin,
)
from .jackson import locate_bottlenecks, profile_closed_form, solve_profile, stationarity_run
from .model import (
    INFINITY,
    Configuration,
    Environment,
    JumpKernel,
    LiminfWarning,
    ModelError,
    RateFunction,
    build_environment_iid,
    build_environment_with_slow_sites,
)
from .observables import (
    attractiveness_audit,
    compare_to_product_measure,
    source_comparison_audit,
    current_comparison_audit,
)
from .scenario import Scenario

log = logging.getLogger(__name__)

SLACK = 5
VERDICT_COLUMNS = ("experiment", "check", "horizon", "estimate", "stderr", "target", "threshold", "passed",
                   "replicas", "seeds", "window", "leak")


@dataclass
class Verdict:
    experiment: str
    check: str
    horizon: float
    estimate: float
    stderr: float
    target: float
    threshold: float
    passed: bool | None
    replicas: int
    seeds: str
    window: tuple[int, int] | None
    leak: int = 0

    def __post_init__(self):
        if self.leak and self.passed:
            self.passed = False

    def row(self) -> list[str]:
        status = "info" if self.passed is None else ("pass" if self.passed else "fail")
        win = "" if self.window is None else f"[{self.window[0]};{self.window[1]}]"
        return [self.experiment, self.check, _fmt(self.horizon), _fmt(self.estimate), _fmt(self.stderr),
                _fmt(self.target), _fmt(self.threshold), status, str(self.replicas), self.seeds, win,
                str(self.leak)]


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def write_verdicts(rows: Sequence[Verdict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_COLUMNS)
        for v in rows:
            w.writerow(v.row())


def read_verdicts(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class ExperimentResult:
    verdicts: list[Verdict]
    tables: flux.FluxTables | None = None
    snapshots: list[tuple[float, int, int]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.passed is False]

    @property
    def ok(self) -> bool:
        return not self.failed

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_verdicts(self.verdicts, out / "verdicts.csv")
        if self.tables is not None:
            self.tables.to_csv(out / "tables.csv")
        with open(out / "snapshots.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "site", "occupancy"])
            for t, x, n in self.snapshots:
                w.writerow([_fmt(t), x, "inf" if n >= INFINITY else n])


def _seeds(seed: int, n: int) -> str:
    return f"{seed}:0-{n - 1}"


def _mean_se(values) -> tuple[float, float]:
    a = np.asarray(values, float)
    if a.size < 2:
        return float(a.mean()), 0.0
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def _snap(t: float, occ: np.ndarray, left: int, sites: Sequence[int] | None = None):
    idx = range(occ.size) if sites is None else [x - left for x in sites]
    return [(t, left + i, int(occ[i])) for i in idx]


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------


def deterministic_profile(window: tuple[int, int], density: float, lo: int, hi: int) -> np.ndarray:
    """Occupancy with exact running density on ``[lo, hi]``: the ``k``-th site
    counted leftwards from ``hi`` holds ``floor(rho k) - floor(rho (k-1))``."""
    occ = np.zeros(window[1] - window[0] + 1, np.int64)
    xs = np.arange(max(lo, window[0]), min(hi, window[1]) + 1)
    k = hi - xs + 1
    occ[xs - window[0]] = np.floor(density * k) - np.floor(density * (k - 1))
    return occ


def inverse_annealed_density(source, rho: float) -> float:
    """Fugacity ``lam`` in ``[0, c]`` with ``Rbar(lam) = rho``."""
    c = source.c
    rho_c = flux.critical_density(source)
    if rho <= 0:
        return 0.0
    if rho >= rho_c:
        return c
    f = lambda lam: float(source.rbar(np.asarray(lam))) - rho
    return float(optimize.brentq(f, 0.0, c * (1 - 1e-15), xtol=1e-15, rtol=1e-14))


def _initial_factory(sc: Scenario, env: Environment, g: RateFunction, rho_c: float):
    """Returns ``make(rng) -> occupancy`` for the scenario's initial condition."""
    spec = dict(sc.initial)
    kind = spec.get("kind", "empty")
    window = env.window
    hi = int(spec.get("edge", -1))
    if kind == "empty":
        occ = np.zeros(len(env), np.int64)
        return lambda rng: occ.copy()
    if kind == "deterministic_profile":
        if "density" in spec:
            rho = float(spec["density"])
        else:
            rho = float(spec.get("density_factor", 1.0)) * rho_c
        occ = deterministic_profile(window, rho, window[0], hi)
        return lambda rng: occ.copy()
    if kind == "product_measure":
        lam = spec.get("fugacity")
        if lam == "c":
            lam = env.c
        elif lam is None:
            src = flux.LawSource(sc.law(), g)
            rho = float(spec["density"]) if "density" in spec else float(spec.get("density_fraction", 0.5)) * rho_c
            lam = inverse_annealed_density(src, rho)
        lam = float(lam)
        stop = int(spec["edge"]) if "edge" in spec else window[1]
        sub = env.restrict(window[0], stop)
        mu = ProductMeasure.from_environment(sub, lam, g)

        def make(rng):
            occ = np.zeros(len(env), np.int64)
            occ[: len(sub)] = mu.sample_array(rng, 1)[0]
            return occ

        make.fugacity = lam
        return make
    raise ModelError(f"unknown initial condition {kind!r}")


# ---------------------------------------------------------------------------
# flux tables and their internal checks
# ---------------------------------------------------------------------------


def scenario_tables(sc: Scenario) -> flux.FluxTables:
    kernel = sc.jump_kernel()
    return flux.build_flux_tables(flux.LawSource(sc.law(), sc.rate()), kernel.drift)


def table_checks(tables: flux.FluxTables, n_fenchel: int = 256, name: str = "tables") -> list[Verdict]:
    """Structural checks on flux tables: convexity of ``f*``, monotonicity of
    ``Rbar(lambda_minus)``, ``lambda_minus = c`` below ``v0``,
    ``f_hat(rho_c) = (p - q) c`` and the Fenchel inequality on a grid."""
    rows = []

    def add(check, est, target, thr, ok):
        rows.append(Verdict(name, check, 0.0, est, 0.0, target, thr, ok, 0, "", None))

    rows.append(Verdict(name, "rho_c", 0.0, tables.rho_c, 0.0, math.nan, math.nan, None, 0, "", None))
    if not tables.finite:
        return rows
    drift, c = tables.drift, tables.c
    rows.append(Verdict(name, "v0", 0.0, tables.v0, 0.0, math.nan, math.nan, None, 0, "", None))
    rows.append(Verdict(name, "lambda0", 0.0, tables.lambda0, 0.0, math.nan, math.nan, None, 0, "", None))
    rows.append(Verdict(name, "condition_H", 0.0, float(tables.H_holds), 0.0, math.nan, math.nan, None, 0, "",
                        None))
    v, fs = tables.v_grid, tables.f_star
    slope = np.diff(fs) / np.diff(v)
    d2 = np.diff(slope) / (v[2:] - v[:-2])  # f[v_{i-1}, v_i, v_{i+1}]
    add("f_star_convex_min_second_difference", float(d2.min()), 0.0, -1e-9, bool(d2.min() >= -1e-9))
    R = tables.script_R()
    rise = float(np.max(np.diff(R))) if R.size > 1 else 0.0
    add("script_R_nonincreasing_max_rise", rise, 0.0, 1e-9 * max(1.0, tables.rho_c), bool(rise <= 1e-9 * max(1.0, tables.rho_c)))
    below = v < tables.v0
    dev = float(np.max(np.abs(tables.lambda_minus[below] - c))) if np.any(below) else 0.0
    add("lambda_minus_equals_c_below_v0", dev, 0.0, 1e-12, bool(dev <= 1e-12))
    fh = flux.concave_envelope_f_hat(tables.rho_c, tables)
    add("f_hat_at_rho_c", fh, drift * c, 1e-8, bool(abs(fh - drift * c) <= 1e-8))
    rho = np.linspace(0.0, tables.rho_c, n_fenchel)
    vv = np.linspace(float(v[0]), float(v[-1]), n_fenchel)
    f_rho = np.array([flux.flux_f(float(r), tables) for r in rho])
    fs_v = np.array([flux.legendre_f_star(float(x), tables) for x in vv])
    gap = fs_v[:, None] + vv[:, None] * rho[None, :] - f_rho[None, :]
    viol = int(np.sum(gap < -1e-12))
    add("fenchel_violations", float(viol), 0.0, 0.0, viol == 0)
    return rows


def run_tables(sc: Scenario) -> ExperimentResult:
    tables = scenario_tables(sc)
    return ExperimentResult(table_checks(tables), tables=tables)


# ---------------------------------------------------------------------------
# upper bound near the origin
# ---------------------------------------------------------------------------


def _observable_span(obs: Sequence[LocalObservable]) -> tuple[int, int]:
    sites = [s for h in obs for s in h.sites]
    if not sites:
        raise ModelError("scenario declares no observables")
    return min(sites), max(sites)


def run_upper_bound(sc: Scenario) -> ExperimentResult:
    """Monotone observables near the origin at each horizon versus their
    expectations under the critical product measure."""
    kernel, g = sc.jump_kernel(), sc.rate()
    if not kernel.is_nearest_neighbour:
        raise ModelError("upper-bound experiment needs a nearest-neighbour kernel")
    obs = sc.observable_list()
    lo, hi = _observable_span(obs)
    m = window_margin(sc.horizon, sc.V, SLACK)
    window = (lo - m, hi + m)
    env = sc.build_environment(window)
    eps = float(sc.param("epsilon", 0.05))
    A, a = locate_bottlenecks(env, eps)
    source = flux.EnvironmentSource(env, g)
    rho_c = flux.critical_density(source)
    make = _initial_factory(sc, env, g, rho_c)
    mu_c = ProductMeasure.from_environment(env.restrict(lo, hi), env.c, g)
    n_t = len(sc.horizons)
    ens = np.empty((n_t, sc.replicas, hi - lo + 1), np.int64)
    leak = 0
    snaps = []
    for i in range(sc.replicas):
        ss = replica_seed(sc.seed, i)
        init_ss, stream_ss = ss.spawn(2)
        occ0 = make(np.random.default_rng(init_ss))
        stream = HarrisEventStream(window[0], window[1], sc.horizon, kernel, stream_ss)
        reps = ReplicaSet(stream, [env], [occ0], g)
        for j, t in enumerate(sc.horizons):
            reps.advance(t)
            ens[j, i] = reps.occ[0, lo - window[0] : hi - window[0] + 1]
            if i == 0:
                snaps += _snap(t, reps.occ[0], window[0])
        leak += int(reps.leak[0])
    seeds = _seeds(sc.seed, sc.replicas)
    rows = [Verdict("upper_bound", "initial_density_over_rho_c", 0.0, rho_c, 0.0, math.nan, math.nan, None,
                    sc.replicas, seeds, window, leak),
            Verdict("upper_bound", "bottleneck_A_eps", 0.0, A, 0.0, math.nan, eps, None, sc.replicas, seeds,
                    window, leak)]
    for j, t in enumerate(sc.horizons):
        final = j == n_t - 1
        for r in compare_to_product_measure(ens[j], lo, mu_c, obs):
            rows.append(Verdict("upper_bound", r.observable, t, r.mc_mean, r.stderr, r.exact,
                                r.exact + 3 * r.stderr, r.passes_upper() if final else None, sc.replicas, seeds,
                                window, leak))
    return ExperimentResult(rows, snapshots=snaps, extra={"environment": env, "rho_c": rho_c})


# ---------------------------------------------------------------------------
# necessity: current of a subcritical profile
# ---------------------------------------------------------------------------


def run_necessity(sc: Scenario) -> ExperimentResult:
    """Current across the origin from a subcritical initial profile versus
    the concave envelope of the flux."""
    kernel, g = sc.jump_kernel(), sc.rate()
    tables = scenario_tables(sc)
    if not tables.finite:
        raise ModelError("flux tables unavailable: infinite critical density")
    drift, c = kernel.drift, tables.c
    m = window_margin(sc.horizon, sc.V, SLACK)
    window = (-m, m)
    env = sc.build_environment(window)
    spec = sc.initial
    rho = float(spec.get("density_fraction", 0.5)) * tables.rho_c if "density" not in spec else float(spec["density"])
    scp = Scenario(**{**sc.__dict__, "initial": {**spec, "kind": spec.get("kind", "product_measure"),
                                                  "edge": 0, "density_fraction": rho / tables.rho_c}})
    make = _initial_factory(scp, env, g, tables.rho_c)
    f_hat = flux.concave_envelope_f_hat(rho, tables)
    bound, z_best = flux.necessity_bound(rho, tables)
    path = CurrentPath(0)
    gam = np.empty((len(sc.horizons), sc.replicas))
    leak = 0
    snaps = []
    for i in range(sc.replicas):
        init_ss, stream_ss = replica_seed(sc.seed, i).spawn(2)
        occ0 = make(np.random.default_rng(init_ss))
        stream = HarrisEventStream(window[0], window[1], sc.horizon, kernel, stream_ss)
        reps = ReplicaSet(stream, [env], [occ0], g, paths=[path])
        for j, t in enumerate(sc.horizons):
            reps.advance(t)
            gam[j, i] = reps.gamma[0, 0] / t
            if i == 0:
                snaps += _snap(t, reps.occ[0], window[0])
        leak += int(reps.leak[0])
    seeds = _seeds(sc.seed, sc.replicas)
    tol = 0.02 * drift * c
    rows = [
        Verdict("necessity", "initial_density", 0.0, rho, 0.0, tables.rho_c, math.nan, None, sc.replicas, seeds,
                window, leak),
        Verdict("necessity", "envelope_vs_z_grid_bound", 0.0, bound, 0.0, f_hat, 1e-6,
                abs(bound - f_hat) <= 1e-6, 0, "", None),
        Verdict("necessity", "z_grid_minimiser", 0.0, z_best, 0.0, math.nan, math.nan, None, 0, "", None),
    ]
    for j, t in enumerate(sc.horizons):
        est, se = _mean_se(gam[j])
        final = j == len(sc.horizons) - 1
        rows.append(Verdict("necessity", "current_below_envelope", t, est, se, f_hat, f_hat + tol,
                            (est <= f_hat + tol) if final else None, sc.replicas, seeds, window, leak))
        sep = drift * c - est
        rows.append(Verdict("necessity", "separation_from_critical_current_in_stderr", t,
                            sep / se if se > 0 else math.inf, se, drift * c, 5.0,
                            (sep >= 5 * se) if final else None, sc.replicas, seeds, window, leak))
    return ExperimentResult(rows, tables=tables, snapshots=snaps)


# ---------------------------------------------------------------------------
# counterexample with sparse spikes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CounterexampleBlueprint:
    """Positions ``x_0 = 0 > x_1 > ...``, gaps ``|x_{n+1} - x_n|``, horizons
    ``t_n = gap_n / (1 + V)`` and spike heights ``y_n``.

    ``x`` has one more entry than the other arrays (the left end of the last gap).
    """

    x: np.ndarray
    delta: np.ndarray
    t: np.ndarray
    y: np.ndarray
    rho: np.ndarray  # spike density per gap (rho_c, or the divergent schedule)
    V: float
    c: float

    @property
    def n_max(self) -> int:
        return self.delta.size - 1

    def gap_ratios(self) -> np.ndarray:
        return np.abs(self.x[:-1]) / self.delta

    def partial_densities(self) -> np.ndarray:
        """``(sum_{i<n} y_i) / |x_n|`` for ``n = 1 .. n_max + 1``."""
        return np.cumsum(self.y) / np.abs(self.x[1:])

    def slow_sites(self) -> list[tuple[int, float]]:
        return [(int(self.x[n]), self.c + 1.0 / (n + 2)) for n in range(1, self.x.size - 1)]

    def configuration(self, n: int, window: tuple[int, int]) -> np.ndarray:
        """Truncated initial configuration: ``y_k`` at ``x_k`` for ``1 <= k <= n``."""
        occ = np.zeros(window[1] - window[0] + 1, np.int64)
        for k in range(1, n + 1):
            occ[int(self.x[k]) - window[0]] = self.y[k]
        return occ

    def validate(self) -> None:
        if self.x[0] != 0 or np.any(np.diff(self.x) >= 0):
            raise ModelError("positions must start at 0 and decrease strictly")
        r = self.gap_ratios()[1:]
        if r.size >= 2 and not (np.all(np.diff(r) <= 1e-12) and r[-1] < r[-2]):
            raise ModelError("gap test failed: |x_n| / |delta_n| is not decreasing towards 0 "
                             f"(ratios {np.round(r, 4).tolist()})")
        if np.any(self.y < 0):
            raise ModelError("negative spike height")


def _gap_sequence(growth: str, d0: int, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if growth == "factorial":
        return np.array([d0 * math.factorial(k) for k in n], np.int64)
    if growth == "geometric":
        return np.array([d0 * 3**k for k in n], np.int64)
    raise ModelError(f"unknown gap growth {growth!r}")


def build_counterexample(sc: Scenario, kernel: JumpKernel | None = None, tables: flux.FluxTables | None = None,
                         positions: Sequence[int] | None = None, max_sites: int = 5_000_000
                         ) -> tuple[CounterexampleBlueprint, Environment]:
    """Blueprint and environment with slow sites ``c + 1/(n+2)`` at ``x_n``.

    ``positions`` overrides the gap schedule (``x_0 .. x_{n_max+1}``)."""
    kernel = kernel or sc.jump_kernel()
    if not kernel.is_totally_asymmetric or kernel.prob(1) >= 1.0:
        raise ModelError("counterexample needs a totally asymmetric kernel with p(1) < 1")
    g = sc.rate()
    c = sc.c
    V = sc.V
    if positions is None:
        n_max = int(sc.param("n_max", 4))
        delta = _gap_sequence(sc.param("growth", "factorial"), int(sc.param("d0", 6)), n_max)
        x = np.concatenate([[0], -np.cumsum(delta)]).astype(np.int64)
    else:
        x = np.asarray(positions, np.int64)
        delta = -np.diff(x)
    rho_c = flux.critical_density(flux.LawSource(sc.law(), g)) if tables is None else tables.rho_c
    n = np.arange(delta.size)
    rho = np.full(delta.size, rho_c) if math.isfinite(rho_c) else np.log(n + 2.0)
    y = np.floor(rho * delta).astype(np.int64)
    bp = CounterexampleBlueprint(x, delta, delta / (1.0 + V), y, rho, V, c)
    bp.validate()
    right = int(math.ceil(V * bp.t[-1])) + SLACK
    if right - int(x[-2]) + 1 > max_sites:
        raise ModelError("window exceeds the configured memory budget")
    base = build_environment_iid(sc.law(), (int(x[-2]), right), sc.environment_seed())
    with warnings.catch_warnings():
        # the spike positions grow factorially, so their ratios do not tend to 1
        warnings.simplefilter("ignore", LiminfWarning)
        env = build_environment_with_slow_sites(base, [s for s in bp.slow_sites() if base.contains(s[0])])
    return bp, env


def run_counterexample(sc: Scenario, blueprint: CounterexampleBlueprint | None = None,
                       env: Environment | None = None) -> ExperimentResult:
    """Current across the origin at ``t_n`` from the truncated spike
    configuration, for ``n = 1 .. n_max``."""
    kernel, g = sc.jump_kernel(), sc.rate()
    if blueprint is None:
        blueprint, env = build_counterexample(sc, kernel)
    bp = blueprint
    drift_rate = sum(z * kernel.prob(z) for z in kernel.displacements)
    target = bp.c * drift_rate
    seeds = _seeds(sc.seed, sc.replicas)
    dens = bp.partial_densities()
    rho_ref = float(bp.rho[-1])
    rows = [Verdict("counterexample", f"blueprint_partial_density_n{k + 1}", 0.0, d, 0.0, rho_ref,
                    0.02 * rho_ref, None, 0, "", None) for k, d in enumerate(dens)]
    rows[-1].passed = bool(abs(dens[-1] - rho_ref) <= 0.02 * rho_ref) if math.isfinite(rho_ref) else None
    bound_ok = True
    snaps = []
    for n in range(1, bp.n_max + 1):
        t_n = float(bp.t[n])
        x_n = int(bp.x[n])
        window = (x_n, int(math.ceil(sc.V * t_n)) + SLACK)
        sub = env.restrict(*window)
        occ0 = bp.configuration(n, window)
        spike_mass = int(occ0[x_n - window[0] + 1 :].sum())
        a_n = sub[x_n]
        gam = np.empty(sc.replicas)
        leak = 0
        for i in range(sc.replicas):
            stream = HarrisEventStream(window[0], window[1], t_n, kernel, replica_seed(sc.seed, n, i))
            reps = ReplicaSet(stream, [sub], [occ0], g, paths=[CurrentPath(0)])
            reps.advance(t_n)
            gamma = int(reps.gamma[0, 0])
            potential = int(np.sum((stream.sites == x_n - window[0]) & (stream.u <= a_n)))
            bound_ok &= gamma <= potential + spike_mass
            gam[i] = gamma / t_n
            leak += int(reps.leak[0])
            if i == 0:
                snaps += _snap(t_n, reps.occ[0], window[0])
        est, se = _mean_se(gam)
        last = n == bp.n_max
        tol = c_tol = 0.05 * bp.c
        rows.append(Verdict("counterexample", f"current_below_c_n{n}", t_n, est, se, bp.c, bp.c + tol,
                            (est <= bp.c + c_tol) if last else None, sc.replicas, seeds, window, leak))
        sep = target - est
        rows.append(Verdict("counterexample", f"stationary_target_separation_in_stderr_n{n}", t_n,
                            sep / se if se > 0 else math.copysign(math.inf, sep), se, target, 5.0,
                            (sep >= 5 * se) if last else None, sc.replicas, seeds, window, leak))
        rows.append(Verdict("counterexample", f"spike_mass_over_t_n{n}", t_n, spike_mass / t_n, 0.0, math.nan,
                            math.nan, None, sc.replicas, seeds, window, leak))
    rows.append(Verdict("counterexample", "pathwise_potential_jump_bound", 0.0, float(bound_ok), 0.0, 1.0, 1.0,
                        bool(bound_ok), sc.replicas, seeds, None, 0))
    return ExperimentResult(rows, snapshots=snaps, extra={"blueprint": bp, "environment": env})


# ---------------------------------------------------------------------------
# source process: tail statistic and local equilibrium
# ---------------------------------------------------------------------------


def _source_runs(sc: Scenario, t: float, env: Environment, kernel: JumpKernel, g: RateFunction,
                 probes: Sequence[int], obs_sites: Sequence[int]):
    """Tail masses right of each probe site and occupancies at ``obs_sites``."""
    beta = float(sc.param("beta", -1.0))
    x_t, left, _ = source_window(beta, t, kernel, env.right)
    right = x_t + window_margin(t, sc.V, SLACK)
    sub = env.restrict(left, right)
    tails = np.empty((sc.replicas, len(probes)))
    occs = np.empty((sc.replicas, len(obs_sites)), np.int64)
    leak = 0
    snap = []
    for i in range(sc.replicas):
        stream = HarrisEventStream(left, right, t, kernel, replica_seed(sc.seed, int(t * 1000), i))
        cfg = Configuration.source_block((left, right), x_t)
        reps = ReplicaSet(stream, [sub], [cfg], g)
        reps.advance(t)
        occ = reps.occ[0]
        csum = np.cumsum(np.where(occ >= INFINITY, 0, occ)[::-1])[::-1]
        for k, x in enumerate(probes):
            j = x - left + 1
            tails[i, k] = csum[j] if j < occ.size else 0
        occs[i] = occ[np.asarray(obs_sites) - left]
        leak += int(reps.leak[0])
        if i == 0:
            snap = _snap(t, occ, left)
    return x_t, (left, right), tails / t, occs, leak, snap


def _source_environment(sc: Scenario, kernel: JumpKernel) -> Environment:
    beta = float(sc.param("beta", -1.0))
    if beta >= 0:
        raise ModelError("source speed beta must be negative")
    t = sc.horizon
    lo = int(math.floor(beta * t)) - kernel.max_range + 1
    hi = int(math.floor(beta * t)) + window_margin(t, sc.V, SLACK)
    for s in sc.horizons:
        x_s = int(math.floor(beta * s))
        lo = min(lo, x_s - kernel.max_range + 1)
        hi = max(hi, x_s + window_margin(s, sc.V, SLACK))
    return sc.build_environment((lo, hi))


def run_source_hydro(sc: Scenario, local_eq_only: bool = False) -> ExperimentResult:
    """Tail statistic ``t^-1 sum_{x > x_t + floor(vt)} eta_t(x)`` versus ``f*(v)``
    and one-sided local-equilibrium checks at ``floor(x_t + vt)``."""
    kernel, g = sc.jump_kernel(), sc.rate()
    tables = scenario_tables(sc)
    if not tables.finite:
        raise ModelError("flux tables unavailable: infinite critical density")
    beta = float(sc.param("beta", -1.0))
    v_grid = [] if local_eq_only else [float(v) for v in sc.param("v_grid", [0.2, 0.4, 0.6, 0.8])]
    le_grid = [float(v) for v in sc.param("local_eq_v", [0.05])]
    for v in v_grid:
        if not 0 < v <= -beta:
            raise ModelError("v-grid must lie in (0, -beta]")
    for v in le_grid:
        if not 0 < v < -beta:
            raise ModelError("local-equilibrium speeds must lie in (0, -beta)")
    template = sc.observable_list() or [LocalObservable.single(s, k, p) for s in (0, 1, 2)
                                        for k, p in (("threshold", 1), ("min_cap", 3))]
    env = _source_environment(sc, kernel)
    rows = []
    snaps = []
    seeds = _seeds(sc.seed, sc.replicas)
    for j, t in enumerate(sc.horizons):
        final = j == len(sc.horizons) - 1
        x_t = int(math.floor(beta * t))
        probes = [x_t + int(math.floor(v * t)) for v in v_grid]
        shifts = [int(math.floor(x_t + v * t)) for v in le_grid]
        obs_sites = sorted({s + d for d in shifts for h in template for s in h.sites})
        x_t, window, tails, occs, leak, snap = _source_runs(sc, t, env, kernel, g, probes, obs_sites or [x_t + 1])
        snaps += snap
        for k, v in enumerate(v_grid):
            est, se = _mean_se(tails[:, k])
            fs = flux.legendre_f_star(v, tables)
            thr = max(0.1 * fs, 3 * se)
            rows.append(Verdict("source_hydro", f"tail_statistic_v{v:g}", t, est, se, fs, thr,
                                (abs(est - fs) <= thr) if final else None, sc.replicas, seeds, window, leak))
        for v, d in zip(le_grid, shifts):
            lam = flux.lambda_minus(v, tables)
            obs = [h.shifted(d) for h in template]
            sites = [s for h in obs for s in h.sites]
            mu = ProductMeasure.from_environment(env.restrict(min(sites), max(sites)), lam, g)
            block = np.zeros((sc.replicas, max(sites) - min(sites) + 1), np.int64)
            for s in set(sites):
                block[:, s - min(sites)] = occs[:, obs_sites.index(s)]
            for r in compare_to_product_measure(block, min(sites), mu, obs):
                rows.append(Verdict("local_equilibrium", f"v{v:g}:{r.observable}", t, r.mc_mean, r.stderr, r.exact,
                                    r.exact - 3 * r.stderr, r.passes_lower() if final else None, sc.replicas,
                                    seeds, window, leak))
    return ExperimentResult(rows, tables=tables, snapshots=snaps, extra={"environment": env})


def run_local_equilibrium(sc: Scenario) -> ExperimentResult:
    return run_source_hydro(sc, local_eq_only=True)


# ---------------------------------------------------------------------------
# Jackson network
# ---------------------------------------------------------------------------


def jackson_residual_check(n_instances: int, seed: int, c: float = 0.5) -> tuple[float, float]:
    """Max residual of the closed-form profile over random instances and the
    max deviation of ``p = 1`` profiles from ``alpha(l)``."""
    rng = np.random.default_rng(seed)
    worst = worst_p1 = 0.0
    for _ in range(n_instances):
        l = int(rng.integers(-50, 0))
        r = l + int(rng.integers(2, 60))
        p = float(rng.uniform(0.5 + 1e-3, 1.0))
        a = c + (1 - c) * (1 - rng.random(r - l + 1))
        env = Environment(l, a, c)
        prof = solve_profile(env, p, l, r)
        worst = max(worst, float(np.max(np.abs(prof.residuals()))))
        const = profile_closed_form(a[0], a[-1], 1.0, l, r, prof.sites)
        worst_p1 = max(worst_p1, float(np.max(np.abs(const - a[0]))))
    return worst, worst_p1


def run_jackson(sc: Scenario) -> ExperimentResult:
    """Closed-form residuals, ``p = 1`` profiles and the stationarity check."""
    g = sc.rate()
    kernel = sc.jump_kernel()
    p = kernel.p
    n_inst = int(sc.param("instances", 1000))
    res, dev = jackson_residual_check(n_inst, sc.seed, sc.c)
    rows = [Verdict("jackson", "max_profile_residual", 0.0, res, 0.0, 0.0, 1e-12, res <= 1e-12, n_inst,
                    str(sc.seed), None),
            Verdict("jackson", "p1_profile_max_deviation_from_alpha_l", 0.0, dev, 0.0, 0.0, 1e-12, dev <= 1e-12,
                    n_inst, str(sc.seed), None)]
    l, r = (int(v) for v in sc.environment.get("window", [0, 21]))
    env = sc.build_environment((l, r))
    over = {}
    if "reservoir_alpha_l" in sc.parameters:
        over[l] = float(sc.param("reservoir_alpha_l"))
    if "reservoir_alpha_r" in sc.parameters:
        over[r] = float(sc.param("reservoir_alpha_r"))
    if over:
        env = env.with_rates(over)
    t = sc.horizon
    rep = stationarity_run(env, p, l, r, g, t, sc.replicas, sc.seed)
    seeds = _seeds(sc.seed, sc.replicas)
    for x, m_, se, ex in zip(rep.sites, rep.mc_mean, rep.stderr, rep.exact):
        rows.append(Verdict("jackson", f"site_mean_{int(x)}", t, m_, se, ex, 3 * se, None, sc.replicas, seeds,
                            (l, r), rep.leak))
    frac = rep.pass_fraction
    rows.append(Verdict("jackson", "stationarity_pass_fraction", t, frac, 0.0, 0.95, 0.95, frac >= 0.95,
                        sc.replicas, seeds, (l, r), rep.leak))
    return ExperimentResult(rows)


# ---------------------------------------------------------------------------
# pathwise coupling audits
# ---------------------------------------------------------------------------


def _random_config(rng, size: int) -> np.ndarray:
    mean = rng.uniform(0.0, 3.0)
    return rng.geometric(1.0 / (1.0 + mean), size) - 1


def run_audits(sc: Scenario) -> ExperimentResult:
    """Randomised pathwise checks: order preservation, the current comparison
    inequality, the source comparison inequality, label ordering and finite
    propagation.  All must hold in every instance."""
    kernel, g = sc.jump_kernel(), sc.rate()
    law = sc.law()
    n_inst = int(sc.param("instances", 1000))
    width = int(sc.param("instance_window", 40))
    t = float(sc.horizon)
    m = window_margin(t, sc.V, SLACK)
    inner = (-(width // 2), width - width // 2 - 1)
    window = (inner[0] - m, inner[1] + m)
    rng = np.random.default_rng(replica_seed(sc.seed, 0))
    counts = {"attractiveness": [0, 0], "current_comparison": [0, 0], "source_comparison": [0, 0],
              "label_order": [0, 0]}
    leaks = {k: 0 for k in counts}
    for i in range(n_inst):
        env = build_environment_iid(law, window, int(rng.integers(2**63)))
        a = np.zeros(window[1] - window[0] + 1, np.int64)
        b = np.zeros_like(a)
        sl = slice(inner[0] - window[0], inner[1] - window[0] + 1)
        a[sl] = _random_config(rng, width)
        b[sl] = _random_config(rng, width)
        lo_cfg = Configuration(window[0], np.minimum(a, b))
        hi_cfg = Configuration(window[0], np.maximum(a, b))
        za, zb = Configuration(window[0], a), Configuration(window[0], b)
        ss = replica_seed(sc.seed, 1, i)
        res = attractiveness_audit(lo_cfg, hi_cfg, env, kernel, g, t, ss)
        counts["attractiveness"][0] += res.ok
        leaks["attractiveness"] += res.leak
        speed = float(rng.uniform(-1.0, 1.0))
        start = int(rng.integers(inner[0], inner[1] + 1))
        path = _random_path(rng, start, speed, t)
        res = current_comparison_audit(za, zb, path, env, kernel, g, t, ss)
        counts["current_comparison"][0] += res.ok
        leaks["current_comparison"] += res.leak
        y = int(rng.integers(inner[0], inner[1] + 1))
        z = int(rng.integers(y, inner[1] + 1))
        res = source_comparison_audit(za, y, z, env, kernel, g, t, ss)
        counts["source_comparison"][0] += res.ok
        leaks["source_comparison"] += res.leak
        if kernel.is_nearest_neighbour:
            ref = int(rng.integers(inner[0], inner[1] + 1))
            extra = a.copy()
            extra[ref - window[0]] += 1
            ok, tr = label_order_check(Configuration(window[0], extra), za, ref, 1, env, kernel, g, t, ss)
            counts["label_order"][0] += ok
            leaks["label_order"] += int(tr.leak.sum())
        for k in counts:
            counts[k][1] += 1 if (k != "label_order" or kernel.is_nearest_neighbour) else 0
    rows = []
    seeds = _seeds(sc.seed, n_inst)
    for k, (ok, n) in counts.items():
        if n == 0:
            continue
        rows.append(Verdict("audits", f"{k}_holds_fraction", t, ok / n, 0.0, 1.0, 1.0, ok == n, n, seeds,
                            window, leaks[k]))
    # finite propagation with the configured propagation constant
    W = float(sc.param("W", 3.0))
    t_fp = float(sc.param("propagation_time", 10.0))
    trials = int(sc.param("propagation_trials", n_inst))
    half = int(math.ceil(W * t_fp)) + 20
    pad = window_margin(t_fp, sc.V, SLACK)
    fp_win = (-2 * half - pad, 2 * half + pad)
    fp_env = build_environment_iid(law, fp_win, sc.environment_seed())
    base = np.zeros(fp_win[1] - fp_win[0] + 1, np.int64)
    body = slice(pad, base.size - pad)
    base[body] = _random_config(rng, base.size - 2 * pad)
    other = base.copy()
    outside = np.r_[pad : pad + half, base.size - pad - half : base.size - pad]
    other[outside] = _random_config(rng, outside.size)
    x_agree, y_agree = fp_win[0] + pad + half - 1, fp_win[1] - pad - half + 1
    rep = finite_propagation_probe(Configuration(fp_win[0], base), Configuration(fp_win[0], other),
                                   (x_agree, y_agree), W, t_fp, trials, fp_env, kernel,
                                   g, replica_seed(sc.seed, 2))
    rows.append(Verdict("audits", "finite_propagation_interior_discrepancies", t_fp, rep.violations, 0.0, 0.0,
                        poisson_race_bound(W, t_fp), rep.violations == 0 and not rep.degenerate, trials,
                        _seeds(sc.seed, trials), fp_win, 0))
    rows.append(Verdict("audits", "finite_propagation_leak", t_fp, rep.leaks, 0.0, 0.0, 0.0, rep.leaks == 0,
                        trials, _seeds(sc.seed, trials), fp_win, 0))
    return ExperimentResult(rows)


def _random_path(rng, start: int, speed: float, t: float) -> CurrentPath:
    """Nearest-neighbour observer with Poisson jump times of total rate ``|speed| + 1``."""
    n = int(rng.poisson((abs(speed) + 1.0) * t))
    times = np.sort(rng.uniform(0.0, t, n))
    p_right = 0.5 * (1.0 + speed / (abs(speed) + 1.0))
    dirs = np.where(rng.random(n) < p_right, 1, -1)
    keep = np.concatenate([[True], np.diff(times) > 0]) if n else np.zeros(0, bool)
    return CurrentPath(start, times[keep].tolist(), dirs[keep].tolist())


# ---------------------------------------------------------------------------
# domination of the source process
# ---------------------------------------------------------------------------


def run_domination_probe(sc: Scenario) -> ExperimentResult:
    """Probability that the supercritical process dominates the source
    process ``x_t = floor(beta t)`` on ``[A_eps, right edge]``, per horizon;
    a subcritical initial profile is run on the same streams as a contrast."""
    kernel, g = sc.jump_kernel(), sc.rate()
    tables = scenario_tables(sc)
    if not tables.finite or tables.v0 is None:
        raise ModelError("front speed unavailable")
    v0 = tables.v0
    beta = float(sc.param("beta", -2.0 * v0 if v0 > 0 else -0.5))
    eps = float(sc.param("epsilon", 0.1))
    t_max = sc.horizon
    x_max = int(math.floor(beta * t_max))
    env = sc.build_environment((x_max - window_margin(t_max, sc.V, SLACK),
                                max(x_max + window_margin(t_max, sc.V, SLACK), 1)))
    A, _ = locate_bottlenecks(env.restrict(env.left, max(env.right, 0)), eps)
    rho_c = tables.rho_c
    factors = {"supercritical": float(sc.param("density_factor", 2.0)),
               "subcritical": float(sc.param("control_density_factor", 0.25))}
    rows = []
    seeds = _seeds(sc.seed, sc.replicas)
    for t in sc.horizons:
        x_t, _, _ = source_window(beta, t, kernel, env.right)
        # the supercritical process needs its own mass left of the source
        left = x_t - window_margin(t, sc.V, SLACK)
        right = max(x_t + window_margin(t, sc.V, SLACK), A + 1)
        sub = env.restrict(left, right)
        src = Configuration.source_block((left, right), x_t).occupancy
        hits = {k: 0 for k in factors}
        frac = {k: 0.0 for k in factors}
        leak = 0
        for i in range(sc.replicas):
            stream = HarrisEventStream(left, right, t, kernel, replica_seed(sc.seed, int(t * 1000), i))
            cfgs = [deterministic_profile((left, right), f * rho_c, left, -1) for f in factors.values()]
            reps = ReplicaSet(stream, [sub] * 3, [src] + cfgs, g)
            reps.advance(t)
            sl = slice(A - left, None)
            ref = np.where(reps.occ[0, sl] >= INFINITY, 0, reps.occ[0, sl])
            for k, r in zip(factors, (1, 2)):
                dom = reps.occ[r, sl] >= ref
                hits[k] += bool(dom.all())
                frac[k] += float(dom.mean()) / sc.replicas
            leak += int(reps.leak[1:].sum())
        for k in factors:
            pr = hits[k] / sc.replicas
            se = math.sqrt(pr * (1 - pr) / sc.replicas)
            rows.append(Verdict("domination_probe", f"{k}_dominates_source_eps{eps:g}", t, pr, se, math.nan,
                                math.nan, None, sc.replicas, seeds, (left, right), leak))
            rows.append(Verdict("domination_probe", f"{k}_dominated_site_fraction_eps{eps:g}", t, frac[k], 0.0,
                                math.nan, math.nan, None, sc.replicas, seeds, (left, right), leak))
    return ExperimentResult(rows, tables=tables)


RUNNERS = {
    "tables": run_tables,
    "upper_bound": run_upper_bound,
    "necessity": run_necessity,
    "counterexample": run_counterexample,
    "source_hydro": run_source_hydro,
    "local_equilibrium": run_local_equilibrium,
    "jackson_stationarity": run_jackson,
    "coupling_audits": run_audits,
    "domination_probe": run_domination_probe,
}


def run_scenario(sc: Scenario) -> ExperimentResult:
    return RUNNERS[sc.kind](sc)
