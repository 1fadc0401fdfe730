"""Currents, height functions and statistical comparison with product measures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .equilibria import LocalObservable, ProductMeasure, exact_expectation
from .harris import CurrentPath, HarrisEventStream, ReplicaSet
from .model import INFINITY, Configuration, Environment, JumpKernel, ModelError, RateFunction

INFINITE_HEIGHT = math.inf


def current(replicas: ReplicaSet, replica: int = 0, path: int = 0) -> int:
    """Signed rightward current across the tracked path since time 0."""
    if not replicas.paths:
        raise ModelError("no path attached to these replicas")
    return int(replicas.gamma[replica, path])


def tail_identity_value(replicas: ReplicaSet, replica: int, path: int) -> int:
    """``sum_{x > x_t} eta_t(x) - sum_{x > x_0} eta_0(x)`` within the window.

    Equals the tracked current as long as no particle has left the window."""
    left = replicas.stream.left
    x_t = replicas.path_position(path)
    x_0 = replicas.paths[path].start
    now = replicas.occ[replica, x_t - left + 1 :]
    before = replicas.initial[replica, x_0 - left + 1 :]
    if np.any(now >= INFINITY) or np.any(before >= INFINITY):
        raise ModelError("tail contains INFINITY sites")
    return int(now.sum()) - int(before.sum())


def height_F(x0: int, zeta: Configuration, x: int) -> float:
    """``F_{x0}(x, zeta)``: mass in ``(x0, x]`` for ``x > x0``, minus mass in ``[x, x0]`` otherwise."""
    lo, hi = (x0 + 1, x) if x > x0 else (x, x0)
    vals = [zeta[y] for y in range(lo, hi + 1)]
    if any(v >= INFINITY for v in vals):
        return INFINITE_HEIGHT if x > x0 else -INFINITE_HEIGHT
    s = int(sum(vals))
    return s if x > x0 else -s


def height_profile(x0: int, occ: np.ndarray, left: int) -> np.ndarray:
    """``F_{x0}(x, .)`` for every window site ``x`` (finite configurations)."""
    occ = np.asarray(occ, np.int64)
    if np.any(occ >= INFINITY):
        raise ModelError("height profile needs a finite configuration")
    c = np.cumsum(occ)
    i0 = x0 - left
    base = c[i0] if 0 <= i0 < occ.size else (0 if i0 < 0 else c[-1])
    idx = np.arange(occ.size)
    # x > x0: C(x) - C(x0);  x <= x0: -(C(x0) - C(x-1)) = C(x-1) - C(x0)
    before = np.concatenate([[0], c[:-1]])
    return np.where(idx > i0, c - base, before - base)


@dataclass
class AuditResult:
    lhs: int
    rhs: int
    ok: bool
    leak: int


def current_comparison_audit(zeta0: Configuration, zeta0p: Configuration, path: CurrentPath, env: Environment,
                             kernel: JumpKernel, g: RateFunction, t: float, seed) -> AuditResult:
    """Check ``Gamma(t, zeta0) - Gamma(t, zeta0') >= -(0 v sup_y [F(y, zeta0) - F(y, zeta0')])``
    for one coupled run; ``F`` is taken relative to the path's starting site."""
    if zeta0.window != env.window or zeta0p.window != env.window:
        raise ModelError("configurations must live on the environment window")
    d = height_profile(path.start, zeta0.occupancy, env.left) - height_profile(path.start, zeta0p.occupancy, env.left)
    k = max(0, int(d.max()))
    stream = HarrisEventStream(env.left, env.right, t, kernel, seed)
    reps = ReplicaSet(stream, [env, env], [zeta0, zeta0p], g, paths=[path])
    reps.advance(t)
    lhs = int(reps.gamma[0, 0] - reps.gamma[1, 0])
    return AuditResult(lhs, -k, lhs >= -k, int(reps.leak.sum()))


def source_comparison_audit(zeta: Configuration, y: int, z: int, env: Environment, kernel: JumpKernel,
                            g: RateFunction, t: float, seed) -> AuditResult:
    """Check ``Gamma_z(t, zeta) <= Gamma_z(t, eta^{*,y}) + 1{y<z} sum_{x=y+1}^z zeta(x)``
    with ``eta^{*,y} = (+inf) 1{x <= y}``."""
    if y > z:
        raise ModelError("source comparison needs y <= z")
    star = Configuration.source_block(env.window, y)
    stream = HarrisEventStream(env.left, env.right, t, kernel, seed)
    reps = ReplicaSet(stream, [env, env], [zeta, star], g, paths=[CurrentPath(z)])
    reps.advance(t)
    extra = sum(zeta[x] for x in range(y + 1, z + 1)) if y < z else 0
    lhs = int(reps.gamma[0, 0])
    rhs = int(reps.gamma[1, 0]) + int(extra)
    return AuditResult(lhs, rhs, lhs <= rhs, int(reps.leak[0]))


def attractiveness_audit(eta0: Configuration, xi0: Configuration, env: Environment, kernel: JumpKernel,
                         g: RateFunction, t: float, seed) -> AuditResult:
    """Order ``eta <= xi`` at every event time for ordered initial data; returns
    the number of violating events as ``lhs``."""
    if not eta0 <= xi0:
        raise ModelError("initial configurations are not ordered")
    stream = HarrisEventStream(env.left, env.right, t, kernel, seed)
    reps = ReplicaSet(stream, [env, env], [eta0, xi0], g, order_pairs=[(0, 1, env.left, env.right)])
    reps.advance(t)
    v = int(reps.order_violations[0])
    return AuditResult(v, 0, v == 0, int(reps.leak.sum()))


# ---------------------------------------------------------------------------
# comparison with product measures
# ---------------------------------------------------------------------------


@dataclass
class ObservableRow:
    observable: str
    mc_mean: float
    stderr: float
    exact: float
    z: float

    def passes_upper(self, k: float = 3.0) -> bool:
        """One-sided rule ``mean <= exact + k * stderr``."""
        return self.mc_mean <= self.exact + k * self.stderr + 1e-12

    def passes_lower(self, k: float = 3.0) -> bool:
        return self.mc_mean >= self.exact - k * self.stderr - 1e-12


def _z(mean: float, exact: float, se: float) -> float:
    if se > 0:
        return (mean - exact) / se
    if abs(mean - exact) <= 1e-12:
        return 0.0
    return math.copysign(math.inf, mean - exact)


def compare_to_product_measure(ensemble: np.ndarray, left: int, mu: ProductMeasure,
                               observables: Sequence[LocalObservable]) -> list[ObservableRow]:
    """Per-observable Monte Carlo mean, standard error, exact value and z-score.

    ``ensemble`` holds one configuration per row; column 0 is site ``left``.
    """
    ensemble = np.atleast_2d(ensemble)
    n = ensemble.shape[0]
    rows = []
    for h in observables:
        for s in h.sites:
            if not mu.left <= s <= mu.right:
                raise ModelError(f"observable site {s} outside the measure window")
        vals = h.evaluate(ensemble, left)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        exact = exact_expectation(mu, h)
        rows.append(ObservableRow(h.name, mean, se, exact, _z(mean, exact, se)))
    return rows


def write_report(rows: Sequence[ObservableRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["observable", "mc_mean", "stderr", "exact", "z"])
        for r in rows:
            w.writerow([r.observable, f"{r.mc_mean:.12g}", f"{r.stderr:.12g}", f"{r.exact:.12g}", f"{r.z:.6g}"])
