"""Graphical construction of the quenched zero-range process.

A :class:`HarrisEventStream` is the superposition of unit-rate Poisson
clocks on every window site: the total event count over ``[0, t_max]`` is
Poisson with mean ``sites * t_max``, event times are i.i.d. uniform and each
event picks its site uniformly, which is the same law as independent
per-site clocks.  Every event carries a uniform mark ``U`` in ``(0, 1]`` and
a displacement ``Z`` drawn from the jump kernel.  A :class:`ReplicaSet`
applies one stream to several replicas at once (basic coupling); each
replica has its own environment and configuration.

Sites outside the window act as sinks: a finite particle sent there is
removed and counted in the replica's leak counter.  Runs with a nonzero
leak counter are not admissible for statistics.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .model import INFINITY, Configuration, Environment, JumpKernel, ModelError, RateFunction

log = logging.getLogger(__name__)

DEFAULT_V = 3.0


def replica_seed(seed: int | np.random.SeedSequence, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, *[int(k) for k in keys]))
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])


@dataclass
class HarrisEventStream:
    """Marked Poisson events on ``[left, right] x [0, t_max]``."""

    left: int
    right: int
    t_max: float
    kernel: JumpKernel
    seed: int | np.random.SeedSequence

    def __post_init__(self):
        if self.right < self.left:
            raise ModelError("empty window")
        rng = np.random.default_rng(self.seed)
        n_sites = self.right - self.left + 1
        n = int(rng.poisson(n_sites * self.t_max))
        self.times = np.sort(rng.random(n) * self.t_max)
        self.sites = rng.integers(0, n_sites, size=n).astype(np.int64)
        self.u = 1.0 - rng.random(n)
        self.z = self.kernel.sample(rng, n).astype(np.int64)

    @property
    def n_sites(self) -> int:
        return self.right - self.left + 1

    def __len__(self) -> int:
        return self.times.size

    def site_counts(self, until: float | None = None) -> np.ndarray:
        t = self.times if until is None else self.times[self.times <= until]
        return np.bincount(self.sites[: t.size], minlength=self.n_sites)

    def site_times(self, x: int) -> np.ndarray:
        return self.times[self.sites == x - self.left]


@dataclass
class CurrentPath:
    """Observer path ``x_s`` given by a start site and signed unit jumps.

    The tracked bond is ``(x_s, x_s + 1)``.
    """

    start: int
    jump_times: Sequence[float] = ()
    jump_dirs: Sequence[int] = ()

    def __post_init__(self):
        if len(self.jump_times) != len(self.jump_dirs):
            raise ModelError("path needs one direction per jump time")
        if any(d not in (-1, 1) for d in self.jump_dirs):
            raise ModelError("path jumps must be +-1")
        if any(b <= a for a, b in zip(self.jump_times, self.jump_times[1:])):
            raise ModelError("path jump times must increase")

    @classmethod
    def linear(cls, start: int, speed: float, t_max: float) -> "CurrentPath":
        """Path ``start + floor(speed * s)``."""
        if speed == 0:
            return cls(start)
        n = int(math.floor(abs(speed) * t_max))
        times = [(k + 1) / abs(speed) for k in range(n)]
        times = [t for t in times if t <= t_max]
        d = 1 if speed > 0 else -1
        return cls(start, times, [d] * len(times))

    def position(self, t: float) -> int:
        k = int(np.searchsorted(np.asarray(self.jump_times, float), t, side="right"))
        return self.start + int(np.sum(np.asarray(self.jump_dirs[:k], int)))


class ReplicaSet:
    """Replicas driven by a shared event stream.

    Parameters
    ----------
    stream: the shared events.
    alphas: per-replica environments (all on the stream window).
    configs: per-replica initial configurations on the stream window.
    g: rate function.
    paths: observer paths whose currents are tracked in every replica.
    order_pairs: ``(a, b, lo, hi)`` meaning replica ``a`` must stay below
        replica ``b`` on sites ``lo..hi``; violations are counted after every
        event at the touched sites.
    integrate_from: if given, time integrals of every occupancy are
        accumulated from this time on.
    """

    def __init__(self, stream: HarrisEventStream, alphas: Sequence[Environment | np.ndarray],
                 configs: Sequence[Configuration | np.ndarray], g: RateFunction,
                 paths: Sequence[CurrentPath] = (), order_pairs: Sequence[tuple[int, int, int, int]] = (),
                 integrate_from: float | None = None):
        self.stream = stream
        self.g = g
        s = stream.n_sites
        a = []
        for env in alphas:
            if isinstance(env, Environment):
                if env.window != (stream.left, stream.right):
                    raise ModelError("environment window differs from the stream window")
                a.append(env.alpha)
            else:
                arr = np.asarray(env, float)
                if arr.shape != (s,):
                    raise ModelError("rate array does not match the stream window")
                a.append(arr)
        self.alpha = np.ascontiguousarray(np.array(a, dtype=float))
        occ = []
        for cfg in configs:
            if isinstance(cfg, Configuration):
                if cfg.window != (stream.left, stream.right):
                    raise ModelError("configuration window differs from the stream window")
                occ.append(cfg.occupancy)
            else:
                arr = np.asarray(cfg, np.int64)
                if arr.shape != (s,):
                    raise ModelError("occupancy array does not match the stream window")
                occ.append(arr)
        self.occ = np.ascontiguousarray(np.array(occ, dtype=np.int64))
        if self.alpha.shape[0] != self.occ.shape[0]:
            raise ModelError("need one environment per replica")
        self.initial = self.occ.copy()
        n_rep = self.occ.shape[0]
        self.gtab = np.ascontiguousarray(g.values, dtype=float)
        self.leak = np.zeros(n_rep, dtype=np.int64)
        self.time = 0.0
        self._ptr = 0

        self.paths = list(paths)
        p = len(self.paths)
        jmax = max([len(q.jump_times) for q in self.paths] + [1])
        self._path_times = np.full((p, jmax), np.inf)
        self._path_dirs = np.zeros((p, jmax), dtype=np.int64)
        for i, q in enumerate(self.paths):
            self._path_times[i, : len(q.jump_times)] = q.jump_times
            self._path_dirs[i, : len(q.jump_dirs)] = q.jump_dirs
        self._path_next = np.zeros(p, dtype=np.int64)
        self._path_bond = np.array([q.start - stream.left for q in self.paths], dtype=np.int64)
        self.gamma = np.zeros((n_rep, p), dtype=np.int64)
        self._path_err = np.zeros(1, dtype=np.int64)

        pairs = np.array(order_pairs, dtype=np.int64).reshape(-1, 4)
        self._pair_a = pairs[:, 0].copy()
        self._pair_b = pairs[:, 1].copy()
        self._pair_lo = pairs[:, 2] - stream.left
        self._pair_hi = pairs[:, 3] - stream.left
        self.order_violations = np.zeros(pairs.shape[0], dtype=np.int64)
        for k in range(pairs.shape[0]):
            lo, hi = self._pair_lo[k], self._pair_hi[k]
            if np.any(self.occ[self._pair_a[k], lo : hi + 1] > self.occ[self._pair_b[k], lo : hi + 1]):
                self.order_violations[k] += 1

        self._do_integ = integrate_from is not None
        self.integrate_from = 0.0 if integrate_from is None else float(integrate_from)
        self.integral = np.zeros(self.occ.shape, dtype=float)
        self._last = np.zeros(self.occ.shape, dtype=float)

    @property
    def n_replicas(self) -> int:
        return self.occ.shape[0]

    @property
    def path_errors(self) -> int:
        return int(self._path_err[0])

    def advance(self, until: float) -> "ReplicaSet":
        """Apply every event with time ``<= until``."""
        if until > self.stream.t_max + 1e-12:
            raise ModelError("cannot advance beyond the stream horizon")
        if until < self.time:
            raise ModelError("time runs forward only")
        s = self.stream
        self._ptr = _kernels.run_events(
            s.times, s.sites, s.u, s.z, self._ptr, float(until), self.alpha, self.occ, self.gtab, self.leak,
            self._path_times, self._path_dirs, self._path_next, self._path_bond, self.gamma, self._path_err,
            self._pair_a, self._pair_b, self._pair_lo, self._pair_hi, self.order_violations,
            self.integral, self._last, self.integrate_from, self._do_integ,
        )
        self.time = float(until)
        return self

    def time_average(self) -> np.ndarray:
        """Time-averaged occupancy over ``[integrate_from, time]``."""
        if not self._do_integ:
            raise ModelError("occupancy integration was not requested")
        span = self.time - self.integrate_from
        if span <= 0:
            raise ModelError("empty integration interval")
        t0 = np.maximum(self._last, self.integrate_from)
        finite = self.occ < INFINITY
        total = self.integral + np.where(finite, self.occ * (self.time - t0), 0.0)
        return total / span

    def configuration(self, r: int) -> Configuration:
        return Configuration(self.stream.left, self.occ[r].copy())

    def tail_mass(self, r: int, x: int) -> int:
        """``sum_{y > x} eta(y)`` within the window."""
        block = self.occ[r, x - self.stream.left + 1 :]
        if np.any(block >= INFINITY):
            raise ModelError("tail contains INFINITY sites")
        return int(block.sum())

    def path_position(self, p: int) -> int:
        return int(self._path_bond[p]) + self.stream.left


def advance(replicas: ReplicaSet, until: float) -> ReplicaSet:
    return replicas.advance(until)


def window_margin(t: float, V: float = DEFAULT_V, slack: int = 5) -> int:
    return int(math.ceil(V * t)) + slack


# ---------------------------------------------------------------------------
# source process
# ---------------------------------------------------------------------------


def source_window(beta: float, t: float, kernel: JumpKernel, right: int) -> tuple[int, int, int]:
    """``(x_t, left, right)`` with the INFINITY block of width ``max|z|`` at the left edge."""
    if beta >= 0:
        raise ModelError("source speed beta must be negative")
    x_t = int(math.floor(beta * t))
    left = x_t - kernel.max_range + 1
    if right <= x_t:
        raise ModelError("window too small: right edge is left of the source")
    return x_t, left, right


def run_source_process(env: Environment, kernel: JumpKernel, g: RateFunction, beta: float, t: float,
                       seed, right_margin: float | None = None, paths: Sequence[CurrentPath] = ()
                       ) -> tuple[Configuration, ReplicaSet]:
    """Evolve ``(+inf) 1{x <= x_t}``, ``x_t = floor(beta t)``, up to time ``t``.

    ``env`` must cover the source block and the region to its right.  The
    returned replica set carries the leak counter.
    """
    x_t, left, _ = source_window(beta, t, kernel, env.right)
    if env.left > left:
        raise ModelError("window too small: environment does not reach the source block")
    if right_margin is not None and env.right < x_t + right_margin:
        raise ModelError("window too small for the requested margin")
    sub = env.restrict(left, env.right)
    stream = HarrisEventStream(left, env.right, max(t, 1e-12), kernel, seed)
    cfg = Configuration.source_block((left, env.right), x_t)
    reps = ReplicaSet(stream, [sub], [cfg], g, paths=paths)
    reps.advance(t)
    return reps.configuration(0), reps


# ---------------------------------------------------------------------------
# finite propagation
# ---------------------------------------------------------------------------


@dataclass
class PropagationReport:
    trials: int
    violations: int
    leaks: int
    W: float
    t: float
    poisson_bound: float
    degenerate: bool = False

    @property
    def rate(self) -> float:
        return self.violations / self.trials if self.trials else 0.0


def poisson_race_bound(W: float, t: float) -> float:
    """Two-sided bound ``2 P(Poisson(t) >= W t)`` on influence travelling ``W t``."""
    k = int(math.floor(W * t))
    return float(min(1.0, 2.0 * stats.poisson.sf(k - 1, t)))


def finite_propagation_probe(zeta0: Configuration, zeta0p: Configuration, agree: tuple[int, int], W: float,
                             t: float, trials: int, env: Environment, kernel: JumpKernel, g: RateFunction,
                             seed: int = 0) -> PropagationReport:
    """Fraction of coupled runs whose replicas differ inside ``(x + Wt, y - Wt)``
    at some time ``s <= t``.  The configurations must agree on ``(x, y)``."""
    x, y = agree
    if W <= 1:
        raise ModelError("W must exceed 1")
    lo = int(math.floor(x + W * t)) + 1
    hi = int(math.ceil(y - W * t)) - 1
    bound = poisson_race_bound(W, t)
    if hi < lo:
        return PropagationReport(trials, 0, 0, W, t, bound, degenerate=True)
    a, b = zeta0.occupancy, zeta0p.occupancy
    inner = slice(x + 1 - zeta0.left, y - zeta0.left)
    if zeta0.window != zeta0p.window or not np.array_equal(a[inner], b[inner]):
        raise ModelError("configurations must agree on the interval")
    violations = leaks = 0
    pairs = [(0, 1, lo, hi), (1, 0, lo, hi)]
    for i in range(trials):
        stream = HarrisEventStream(env.left, env.right, t, kernel, replica_seed(seed, i))
        reps = ReplicaSet(stream, [env, env], [zeta0, zeta0p], g, order_pairs=pairs)
        reps.advance(t)
        violations += int(reps.order_violations.sum() > 0)
        leaks += int(reps.leak.sum())
    return PropagationReport(trials, violations, leaks, W, t, bound)


def poisson_chi_square(stream: HarrisEventStream, bins: int | None = None) -> float:
    """p-value of a chi-square test that per-site event counts are Poisson(t_max)."""
    counts = stream.site_counts()
    mu = stream.t_max
    lo_k = int(max(0, math.floor(mu - 4 * math.sqrt(mu))))
    hi_k = int(math.ceil(mu + 4 * math.sqrt(mu)))
    edges = np.arange(lo_k, hi_k + 1)
    obs = np.array([np.sum(counts < lo_k + 1)] + [np.sum(counts == k) for k in edges[1:-1]]
                   + [np.sum(counts >= hi_k)], float)
    probs = np.concatenate([[stats.poisson.cdf(lo_k, mu)], stats.poisson.pmf(edges[1:-1], mu),
                            [stats.poisson.sf(hi_k - 1, mu)]])
    exp = probs * counts.size
    # merge sparse cells
    o, e = [], []
    acc_o = acc_e = 0.0
    for oi, ei in zip(obs, exp):
        acc_o += oi
        acc_e += ei
        if acc_e >= 5:
            o.append(acc_o)
            e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and e:
        o[-1] += acc_o
        e[-1] += acc_e
    o, e = np.array(o), np.array(e)
    chi2 = float(((o - e) ** 2 / e).sum())
    return float(stats.chi2.sf(chi2, len(o) - 1))


# ---------------------------------------------------------------------------
# labelled particles
# ---------------------------------------------------------------------------


def _initial_labels(occ: np.ndarray, ref_index: int):
    """Label particles increasingly from left to right so that label -1 is
    the highest at or left of ``ref_index`` and label 0 the lowest right of it."""
    if np.any(occ >= INFINITY):
        raise ModelError("labels need finite configurations")
    n_left = int(occ[: ref_index + 1].sum())
    lab_min = -n_left
    positions = np.repeat(np.arange(occ.size), occ)
    lo = np.zeros(occ.size, dtype=np.int64)
    csum = np.concatenate([[0], np.cumsum(occ)[:-1]])
    lo[:] = lab_min + csum
    return positions.astype(np.int64), lab_min, lo


@dataclass
class LabelTracker:
    """Label positions of a pair of coupled replicas."""

    positions: list[np.ndarray]
    lab_min: list[int]
    k: int
    violations: int
    leak: np.ndarray
    time: float

    def sigma(self, r: int, label: int) -> int:
        i = label - self.lab_min[r]
        pos = self.positions[r]
        if i < 0:
            return -int(_kernels.FAR)
        if i >= pos.size:
            return int(_kernels.FAR)
        return int(pos[i])


def label_order_check(zeta: Configuration, zetap: Configuration, ref: int, k: int, env: Environment,
                      kernel: JumpKernel, g: RateFunction, t: float, seed, fault: bool = False,
                      stream: HarrisEventStream | None = None) -> tuple[bool, LabelTracker]:
    """Run two labelled replicas on one stream and check ``sigma_n >= sigma'_{n-k}``
    at every event.  Labels absent from a replica are at ``-inf`` (below its
    lowest label) or ``+inf`` (above its highest)."""
    if not kernel.is_nearest_neighbour and not set(kernel.displacements) <= {-1, 1}:
        raise ModelError("label dynamics implemented for nearest-neighbour kernels")
    if stream is None:
        stream = HarrisEventStream(env.left, env.right, t, kernel, seed)
    elif (stream.left, stream.right) != env.window:
        raise ModelError("trackers on different streams")
    ref_i = ref - env.left
    p0, m0, lo0 = _initial_labels(zeta.occupancy, ref_i)
    p1, m1, lo1 = _initial_labels(zetap.occupancy, ref_i)
    width = max(p0.size, p1.size, 1)
    pad = _kernels.FAR + 1
    pos = np.full((2, width), pad, dtype=np.int64)
    pos[0, : p0.size] = p0
    pos[1, : p1.size] = p1
    # initial check over all labels present in both
    viol = np.zeros(1, dtype=np.int64)
    for i in range(p0.size):
        j = (m0 + i) - k - m1
        if (0 <= j < p1.size and p0[i] < p1[j]) or j >= p1.size:
            viol[0] += 1
    for j in range(p1.size):
        # labels of zeta' above zeta's range: sigma_{n} = +inf, fine; below: -inf < sigma'
        n = m1 + j + k
        if n < m0 and p1.size:
            viol[0] += 1
            break
    occ = np.ascontiguousarray(np.stack([zeta.occupancy, zetap.occupancy]).astype(np.int64))
    alpha = np.ascontiguousarray(np.stack([env.alpha, env.alpha]))
    lo = np.ascontiguousarray(np.stack([lo0, lo1]))
    leak = np.zeros(2, dtype=np.int64)
    _kernels.run_labels(stream.times, stream.sites, stream.u, stream.z, 0, float(t), alpha, occ,
                        np.ascontiguousarray(g.values), leak, pos, np.array([m0, m1], dtype=np.int64), lo,
                        int(k), viol, 1 if fault else 0)
    tracker = LabelTracker([pos[0, : p0.size].copy(), pos[1, : p1.size].copy()], [m0, m1], k, int(viol[0]),
                           leak, t)
    return viol[0] == 0, tracker
