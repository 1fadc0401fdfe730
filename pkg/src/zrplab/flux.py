"""Convex analysis of the disorder-averaged density and flux.

The mean density ``Rbar(lam)`` is provided by a *source*: a disorder law
(quadrature), a concrete environment (Cesaro average over ``[-n, 0]``) or
a synthetic piecewise-linear table.  Every source also provides the drop
``gap(h) = Rbar(c) - Rbar(c - h)`` evaluated without cancellation, which is
what all quantities near the critical fugacity are built from:

    f*(v)   = (p-q)c - v rho_c + max(0, sup_h [v gap(h) - (p-q)h])   (v >= 0)
    v0      = (p-q) inf_h h / gap(h)
    (H)     : h Rbar'+(c) - gap(h) > 0 for all h in (0, c]
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.optimize import minimize_scalar

from .equilibria import R_drop, _R_precise
from .model import Environment, JumpKernel, ModelError, PointMixture, PowerLaw, RateFunction

log = logging.getLogger(__name__)

INFINITE = math.inf
RHO_CAP = 1e6


class InfiniteCriticalDensity(ModelError):
    """Operation needs a finite critical density."""


class DensitySource(Protocol):
    c: float

    def rbar(self, lam) -> np.ndarray: ...

    def gap(self, h) -> np.ndarray: ...

    def critical_density(self) -> float: ...


def _divergence_ratio(source) -> float:
    """Ratio of successive dyadic increments of ``Rbar(c - h)``; tends to
    ``2^-k``-like values for integrable singularities and to 1 for a
    logarithmic divergence."""
    j = np.arange(28, 42)
    h = source.c * 2.0 ** -j.astype(float)
    gaps = np.asarray(source.gap(h))
    inc = gaps[:-1] - gaps[1:]
    if inc[-2] <= 0:
        return 0.0
    return float(inc[-1] / inc[-2])


@dataclass
class LawSource:
    """``Rbar(lam) = int R(lam/alpha) Q(d alpha)`` by graded Gauss-Legendre quadrature."""

    law: PowerLaw | PointMixture
    g: RateFunction

    def __post_init__(self):
        self.c = self.law.c
        off, w = self.law.quadrature_offsets()
        self._off = off
        self._alpha = self.c + off
        self._w = w
        self._rho_c: float | None = None
        self.diagnostics: dict = {}

    def rbar(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0) or np.any(lam > self.c):
            raise ModelError("fugacity outside [0, c]")
        x = lam[..., None] / self._alpha
        d = (self._off + (self.c - lam[..., None])) / self._alpha
        return (_R_precise(x, d, self.g) * self._w).sum(axis=-1)

    def gap(self, h):
        h = np.asarray(h, dtype=float)
        x_top = self.c / self._alpha
        d_top = self._off / self._alpha
        drops = R_drop(x_top, d_top, h[..., None] / self._alpha, self.g)
        return (drops * self._w).sum(axis=-1)

    def critical_density(self) -> float:
        if self._rho_c is None:
            ratio = _divergence_ratio(self)
            value = float(self.rbar(np.asarray(self.c)))
            self.diagnostics.update(divergence_ratio=ratio, quadrature_value=value)
            self._rho_c = INFINITE if (ratio > 0.999 or value > RHO_CAP) else value
        return self._rho_c


@dataclass
class EnvironmentSource:
    """Cesaro average of ``R(lam/alpha(x))`` over ``x in [-n, 0]``.

    ``n`` defaults to the whole negative part of the window.  The average
    over the right half ``[-n/2, 0]`` is kept as an extrapolation diagnostic.
    """

    env: Environment
    g: RateFunction
    n: int | None = None

    def __post_init__(self):
        self.c = self.env.c
        lo = self.env.left if self.n is None else -int(self.n)
        if lo > 0 or not self.env.contains(lo) or not self.env.contains(0):
            raise ModelError("Cesaro window [-n, 0] not covered by the environment")
        self.n = -lo
        self._alpha = self.env.alpha[self.env.index(lo) : self.env.index(0) + 1]
        self._off = self._alpha - self.c
        self._w = np.full(self._alpha.size, 1.0 / self._alpha.size)
        self.diagnostics: dict = {"n": self.n}

    rbar = LawSource.rbar
    gap = LawSource.gap

    def critical_density(self) -> float:
        full = float(self.rbar(np.asarray(self.c)))
        half_alpha = self._alpha[self._alpha.size // 2 :]
        x = self.c / half_alpha
        half = float(_R_precise(x, (half_alpha - self.c) / half_alpha, self.g).mean())
        self.diagnostics.update(half_window_value=half, extrapolation_gap=full - half)
        return full


@dataclass
class TableSource:
    """Synthetic piecewise-linear ``Rbar`` through knots ``(lam_i, R_i)`` on ``[0, c]``."""

    knots_lambda: np.ndarray
    knots_R: np.ndarray
    c: float = field(init=False)

    def __post_init__(self):
        self.knots_lambda = np.asarray(self.knots_lambda, float)
        self.knots_R = np.asarray(self.knots_R, float)
        if self.knots_lambda[0] != 0.0 or np.any(np.diff(self.knots_lambda) <= 0):
            raise ModelError("table knots must start at 0 and increase")
        if np.any(np.diff(self.knots_R) < 0) or self.knots_R[0] != 0.0:
            raise ModelError("table values must start at 0 and be nondecreasing")
        self.c = float(self.knots_lambda[-1])
        self.diagnostics: dict = {}

    @classmethod
    def affine(cls, c: float, slope: float = 1.0) -> "TableSource":
        return cls(np.array([0.0, c]), np.array([0.0, slope * c]))

    @classmethod
    def kinked(cls, c: float) -> "TableSource":
        """Slopes 1, 3, 1 on ``[0, c/2], [c/2, 3c/4], [3c/4, c]``: front minimiser at ``c/2``."""
        lam = np.array([0.0, 0.5 * c, 0.75 * c, c])
        return cls(lam, np.array([0.0, 0.5 * c, 1.25 * c, 1.5 * c]))

    def rbar(self, lam):
        return np.interp(np.asarray(lam, float), self.knots_lambda, self.knots_R)

    def gap(self, h):
        # interpolate in h directly so that small drops carry no cancellation
        hk = (self.c - self.knots_lambda)[::-1]
        hk[0] = 0.0
        gk = (self.knots_R[-1] - self.knots_R)[::-1]
        return np.interp(np.asarray(h, float), hk, gk)

    def critical_density(self) -> float:
        return float(self.knots_R[-1])


def make_source(obj, g: RateFunction, n: int | None = None):
    if isinstance(obj, (PowerLaw, PointMixture)):
        return LawSource(obj, g)
    if isinstance(obj, Environment):
        return EnvironmentSource(obj, g, n)
    if isinstance(obj, TableSource):
        return obj
    raise TypeError(f"cannot build a density source from {type(obj).__name__}")


def annealed_density_Rbar(source, lam):
    """``Rbar(lam)`` for ``lam`` in ``[0, c)``."""
    lam_a = np.asarray(lam, float)
    if np.any(lam_a >= source.c) or np.any(lam_a < 0):
        raise ModelError("Rbar is evaluated on [0, c); use critical_density at c")
    out = source.rbar(lam_a)
    return out if np.ndim(out) else float(out)


def critical_density(source) -> float:
    return source.critical_density()


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


@dataclass
class FluxTables:
    """Grids and scalars of the flux analysis for one source and drift ``p - q``."""

    source: object
    drift: float
    c: float
    h_grid: np.ndarray  # c - lambda, decreasing in lambda order
    lambda_grid: np.ndarray
    Rbar: np.ndarray
    rho_c: float
    v_grid: np.ndarray
    f_star: np.ndarray
    lambda_minus: np.ndarray
    rho_grid: np.ndarray
    f: np.ndarray
    f_hat: np.ndarray
    v0: float | None
    lambda0: float | None
    Rbar_prime_c: float | None
    H_holds: bool | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rho_c)

    @property
    def gap_grid(self) -> np.ndarray:
        return self.rho_c - self.Rbar

    def script_R(self) -> np.ndarray:
        """``Rbar(lambda_minus(v))`` on the v-grid."""
        return np.asarray(self.source.rbar(self.lambda_minus))

    def to_csv(self, path) -> None:
        n = max(self.lambda_grid.size, self.v_grid.size, self.rho_grid.size)

        def col(a, i):
            return f"{a[i]:.17g}" if i < a.size else ""

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "Rbar", "v", "f_star", "rho", "f", "f_hat", "lambda_minus"])
            for i in range(n):
                w.writerow([col(self.lambda_grid, i), col(self.Rbar, i), col(self.v_grid, i),
                            col(self.f_star, i), col(self.rho_grid, i), col(self.f, i),
                            col(self.f_hat, i), col(self.lambda_minus, i)])


def _lambda_h_grid(c: float, n_uniform: int, n_dyadic: int) -> np.ndarray:
    """``h = c - lambda`` values: uniform plus dyadic towards ``lambda = c``."""
    h_uni = c * np.linspace(0.0, 1.0, n_uniform)
    h_dy = c * 2.0 ** -np.arange(1, n_dyadic + 1, dtype=float)
    h = np.unique(np.concatenate([h_uni, h_dy]))
    return h[::-1]  # lambda increasing


class _Objective:
    """``F(h) = v gap(h) - (p-q) h`` (finite case) or ``(p-q)lam - v Rbar(lam)``."""

    def __init__(self, tables_src, drift, c, rho_c):
        self.src, self.drift, self.c, self.rho_c = tables_src, drift, c, rho_c
        self.finite = math.isfinite(rho_c)

    def values(self, v, h, gap=None, rbar=None):
        if self.finite:
            gap = self.src.gap(h) if gap is None else gap
            return v * gap - self.drift * h
        rbar = self.src.rbar(self.c - h) if rbar is None else rbar
        return self.drift * (self.c - h) - v * rbar

    def f_star_from(self, v, best):
        if self.finite:
            return self.drift * self.c - v * self.rho_c + np.maximum(best, 0.0)
        return best


def build_flux_tables(
    source,
    kernel_or_drift,
    n_lambda: int = 4096,
    n_dyadic: int = 50,
    n_v: int = 2049,
    n_rho: int = 1025,
) -> FluxTables:
    """Tabulate ``Rbar, f, f*, f_hat, lambda_minus`` and the front scalars."""
    drift = kernel_or_drift.drift if isinstance(kernel_or_drift, JumpKernel) else float(kernel_or_drift)
    if drift <= 0:
        raise ModelError("flux analysis needs positive drift p - q")
    c = source.c
    rho_c = source.critical_density()
    finite = math.isfinite(rho_c)
    h = _lambda_h_grid(c, n_lambda, n_dyadic if finite else 30)
    lam = c - h
    if finite:
        gap = np.asarray(source.gap(h))
        rbar = rho_c - gap
    else:
        h = h[h > 0]
        lam = c - h
        gap = None
        rbar = np.asarray(source.rbar(lam))
    diag: dict = dict(getattr(source, "diagnostics", {}))

    obj = _Objective(source, drift, c, rho_c)

    # v-grid
    pos = lam > 0
    ratio_max = float(np.max(lam[pos] / rbar[pos])) if np.any(pos) else 1.0
    v_max = 1.05 * drift * ratio_max
    v = np.linspace(0.0, v_max, n_v)

    f_star, lam_minus = _legendre_on_grid(obj, v, h, gap, rbar)

    v0 = lambda0 = rprime = H = None
    if finite:
        v0, lambda0, rprime, H, extra = _front(source, drift, h, gap)
        diag.update(extra)
        # exactly c on v < v0 (smallest maximiser); enforced by the argmax scan
    rho_max = rho_c if finite else float(rbar[-1])
    rho = np.linspace(0.0, rho_max, n_rho)
    f = flux_from_source(source, rho, drift, rho_c, (h, gap)) if finite else drift * np.interp(rho, rbar, lam)
    f_hat = _envelope_on_grid(rho, v, f_star)
    if finite:
        f_hat[-1] = drift * c if f_hat[-1] > drift * c - 1e-12 else f_hat[-1]
    return FluxTables(source, drift, c, h, lam, rbar, rho_c, v, f_star, lam_minus, rho, f, f_hat,
                      v0, lambda0, rprime, H, diag)


def _legendre_on_grid(obj: _Objective, v: np.ndarray, h: np.ndarray, gap, rbar):
    """``f*`` and smallest maximisers for each ``v`` with two parabolic refinements."""
    f_star = np.empty_like(v)
    lam_minus = np.empty_like(v)
    c = obj.c
    chunk = 128
    for s in range(0, v.size, chunk):
        vv = v[s : s + chunk, None]
        F = obj.values(vv, h[None, :], gap=None if gap is None else gap[None, :],
                       rbar=None if rbar is None else rbar[None, :])
        best_val, best_h = _refine_rows(obj, vv[:, 0], h, F)
        f_star[s : s + chunk] = obj.f_star_from(vv[:, 0], best_val)
        lam_minus[s : s + chunk] = c - best_h
    return f_star, lam_minus


def _refine_rows(obj: _Objective, v: np.ndarray, h: np.ndarray, F: np.ndarray):
    """Per row: refined max of ``F`` and the position of the smallest maximiser.

    The grid is in increasing-lambda (decreasing-h) order.  Grid points whose
    value lies within a relative 1e-12 of the row maximum form candidate
    clusters; the cluster with the smallest lambda wins, and inside it the
    maximiser is refined by two rounds of parabolic interpolation.
    """
    nrow, ncol = F.shape
    M = F.max(axis=1)
    tol = 1e-12 * np.maximum(1.0, np.abs(M))
    near = F >= (M - tol)[:, None]
    first = near.argmax(axis=1)  # smallest-lambda candidate
    # end of that cluster
    idx = np.arange(ncol)
    after = (~near) & (idx[None, :] > first[:, None])
    end = np.where(after.any(axis=1), after.argmax(axis=1) - 1, ncol - 1)
    # best grid point within the first cluster
    masked = np.where((idx[None, :] >= first[:, None]) & (idx[None, :] <= end[:, None]), F, -np.inf)
    k = masked.argmax(axis=1)
    best_val = F[np.arange(nrow), k]
    best_h = h[k].copy()

    interior = (k > 0) & (k < ncol - 1)
    rows = np.flatnonzero(interior)
    if rows.size:
        kk = k[rows]
        x0, x1, x2 = h[kk - 1], h[kk], h[kk + 1]
        y0, y1, y2 = F[rows, kk - 1], F[rows, kk], F[rows, kk + 1]
        for _ in range(2):
            xv = _vertex(x0, x1, x2, y0, y1, y2)
            ok = np.isfinite(xv) & (xv < np.maximum(x0, x2)) & (xv > np.minimum(x0, x2))
            if not np.any(ok):
                break
            yv = np.full_like(xv, -np.inf)
            yv[ok] = obj.values(v[rows[ok]], xv[ok])
            better = ok & (yv > best_val[rows])
            best_val[rows[better]] = yv[better]
            best_h[rows[better]] = xv[better]
            # second round: tight bracket around the vertex
            delta = np.abs(x2 - x0) / 32.0
            x0, x1, x2 = xv - delta, xv, xv + delta
            x0 = np.clip(x0, 0.0, obj.c)
            x2 = np.clip(x2, 0.0, obj.c)
            keep = ok & (x0 < x1) & (x1 < x2)
            if not np.any(keep):
                break
            rows, x0, x1, x2 = rows[keep], x0[keep], x1[keep], x2[keep]
            y0 = obj.values(v[rows], x0)
            y1 = obj.values(v[rows], x1)
            y2 = obj.values(v[rows], x2)
    return best_val, best_h


def _vertex(x0, x1, x2, y0, y1, y2):
    s01 = (y1 - y0) / (x1 - x0)
    s12 = (y2 - y1) / (x2 - x1)
    curv = (s12 - s01) / (x2 - x0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(curv < 0, 0.5 * (x0 + x1) - s01 / (2.0 * curv), np.nan)


def _front(source, drift: float, h: np.ndarray, gap: np.ndarray):
    """``v0, lambda0, Rbar'+(c)`` and the (H) verdict from the drop table."""
    pos = h > 0
    hp, gp = h[pos], gap[pos]
    # one-sided difference quotients along the dyadic sequence
    j = np.arange(1, 51, dtype=float)
    hd = source.c * 2.0**-j
    qd = np.asarray(source.gap(hd)) / hd
    inc = np.diff(qd)
    tail_inc = inc[-12:]
    diverging = bool(tail_inc[-1] > 0 and tail_inc[0] > 0 and tail_inc[-1] / tail_inc[0] > 0.5
                     and qd[-1] > qd[-12])
    rprime = math.inf if diverging else float(np.max(qd[-10:]))
    extra = {"dyadic_quotients_tail": qd[-3:].tolist(), "derivative_diverging": diverging}

    if diverging:
        return 0.0, source.c, rprime, True, extra

    ratio = hp / np.where(gp > 0, gp, np.nan)
    ratio = np.where(np.isfinite(ratio), ratio, np.inf)
    lim_ratio = 1.0 / rprime if rprime > 0 else math.inf
    i = int(np.argmin(ratio))
    m_grid = float(ratio[i])
    m_refined, h_refined = m_grid, float(hp[i])
    # refine an interior minimiser
    if 0 < i < hp.size - 1:
        lo, hi = sorted((float(hp[i - 1]), float(hp[i + 1])))
        res = minimize_scalar(lambda t: t / float(source.gap(np.asarray(t))), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-14})
        if res.fun < m_refined:
            m_refined, h_refined = float(res.fun), float(res.x)
    m = min(m_refined, lim_ratio)
    # smallest minimiser: candidates within tolerance, largest h = smallest lambda
    tol = 1e-9 * max(m, 1e-300)
    cand = np.flatnonzero(ratio <= m + tol)
    limit_cluster = lim_ratio <= m + tol
    if cand.size:
        # clusters in the h-order (decreasing h); does the largest-h cluster reach h->0?
        first = cand[0]
        run_end = first
        while run_end + 1 < hp.size and ratio[run_end + 1] <= m + tol:
            run_end += 1
        # a cluster touching h -> 0 that only starts microscopically close to c
        # means the infimum is approached, not attained
        reaches_limit = run_end == hp.size - 1 and limit_cluster and hp[first] < source.c * 1e-6
        if reaches_limit:
            lambda0 = source.c
        else:
            lambda0 = source.c - (h_refined if m_refined <= m + tol and first <= i <= run_end else float(hp[first]))
    else:
        lambda0 = source.c
    v0 = drift * m
    extra["v0_from_derivative"] = drift / rprime if rprime > 0 else math.inf

    # condition (H)
    slack = hp * rprime - gp
    far = hp >= source.c / 1024.0
    H = bool(np.all(slack[far] > 1e-9) and np.all(slack[~far] >= -1e-12 * np.maximum(1.0, gp[~far])))
    extra["H_min_slack"] = float(slack[far].min()) if np.any(far) else 0.0
    return v0, float(lambda0), rprime, H, extra


def flux_from_source(source, rho, drift: float, rho_c: float | None = None,
                     bracket: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """``f(rho) = (p-q) Rbar^{-1}(rho)``.

    Solves ``gap(h) = rho_c - rho`` for ``h`` by Illinois regula falsi inside
    a bracket taken from a tabulated ``(h, gap)`` pair when given.
    """
    rho = np.atleast_1d(np.asarray(rho, float))
    rho_c = source.critical_density() if rho_c is None else rho_c
    if np.any(rho < 0) or np.any(rho > rho_c * (1 + 1e-15)):
        raise ModelError("density outside [0, rho_c]")
    target = rho_c - rho  # gap is increasing in h
    if bracket is None:
        hs = source.c * np.linspace(0.0, 1.0, 65)
        gs = np.asarray(source.gap(hs))
    else:
        order = np.argsort(bracket[0])
        hs, gs = bracket[0][order], bracket[1][order]
    k = np.clip(np.searchsorted(gs, target), 1, hs.size - 1)
    a, b = hs[k - 1].copy(), hs[k].copy()
    fa, fb = gs[k - 1] - target, gs[k] - target
    side = np.zeros(rho.size, dtype=int)
    for _ in range(60):
        active = (b - a) > 1e-15 * np.maximum(b, 1e-300)
        active &= (fa != 0) & (fb != 0)
        if not np.any(active):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            m = (a * fb - b * fa) / (fb - fa)
        m = np.where(np.isfinite(m) & (m > a) & (m < b), m, 0.5 * (a + b))
        fm = np.zeros_like(m)
        fm[active] = np.asarray(source.gap(m[active])) - target[active]
        left = active & (np.sign(fm) == np.sign(fa))
        right = active & ~left
        # Illinois: halve the stale endpoint value when the same side repeats
        fb = np.where(left & (side == -1), 0.5 * fb, fb)
        fa = np.where(right & (side == 1), 0.5 * fa, fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(right, m, b)
        fb = np.where(right, fm, fb)
        side = np.where(left, -1, np.where(right, 1, side))
    h = np.where(np.abs(fa) < np.abs(fb), a, b)
    out = drift * (source.c - h)
    out = np.where(rho >= rho_c, drift * source.c, out)
    out = np.where(rho <= 0, 0.0, out)
    return out


def _envelope_on_grid(rho: np.ndarray, v: np.ndarray, f_star: np.ndarray) -> np.ndarray:
    """``inf_v [rho v + f*(v)]`` over the grid, with one parabolic correction."""
    out = np.empty_like(rho)
    chunk = 64
    for s in range(0, rho.size, chunk):
        r = rho[s : s + chunk, None]
        G = r * v[None, :] + f_star[None, :]
        k = G.argmin(axis=1)
        val = G[np.arange(G.shape[0]), k]
        inner = (k > 0) & (k < v.size - 1)
        rows = np.flatnonzero(inner)
        if rows.size:
            kk = k[rows]
            y0, y1, y2 = G[rows, kk - 1], G[rows, kk], G[rows, kk + 1]
            curv = y0 - 2 * y1 + y2
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = np.where(curv > 0, -((y2 - y0) ** 2) / (8 * curv), 0.0)
            # never below the neighbouring chord minimum (convexity lower bound)
            val[rows] = np.minimum(val[rows], y1 + np.maximum(corr, -(y1 - np.minimum(y0, y2))))
        out[s : s + chunk] = val
    return out


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------


def _require_finite(tables: FluxTables, what: str) -> None:
    if not tables.finite:
        raise InfiniteCriticalDensity(f"{what} is undefined when rho_c is infinite")


def flux_f(rho: float, tables: FluxTables) -> float:
    if tables.finite:
        return float(flux_from_source(tables.source, np.asarray(rho), tables.drift, tables.rho_c,
                                     (tables.h_grid, tables.gap_grid))[0])
    if rho < 0:
        raise ModelError("negative density")
    lo, hi = 0.0, tables.c
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if float(tables.source.rbar(np.asarray(mid))) < rho:
            lo = mid
        else:
            hi = mid
    return tables.drift * 0.5 * (lo + hi)


def _scalar_objective(tables: FluxTables, v: float):
    obj = _Objective(tables.source, tables.drift, tables.c, tables.rho_c)
    return lambda hh: float(obj.values(v, np.asarray(hh)))


def _scalar_argmax(tables: FluxTables, v: float) -> tuple[float, float]:
    """Refined ``(max F, h at smallest maximiser)`` for one ``v``."""
    obj = _Objective(tables.source, tables.drift, tables.c, tables.rho_c)
    h = tables.h_grid
    F = obj.values(v, h, gap=tables.gap_grid if tables.finite else None,
                   rbar=None if tables.finite else tables.Rbar)
    val, hb = _refine_rows(obj, np.array([v]), h, np.atleast_2d(F))
    best, hbest = float(val[0]), float(hb[0])
    k = int(np.argmin(np.abs(h - hbest)))
    if 0 < k < h.size - 1:
        lo, hi = sorted((float(h[k + 1]), float(h[k - 1])))
        fn = _scalar_objective(tables, v)
        res = minimize_scalar(lambda t: -fn(t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        if -res.fun > best:
            best, hbest = float(-res.fun), float(res.x)
    return best, hbest


def legendre_f_star(v: float, tables: FluxTables) -> float:
    """``f*(v) = sup_{lam in [0,c]} [(p-q) lam - v Rbar(lam)]``."""
    if v <= 0:
        if not tables.finite:
            return tables.drift * tables.c if v == 0 else INFINITE
        return tables.drift * tables.c - v * tables.rho_c
    best, _ = _scalar_argmax(tables, v)
    obj = _Objective(tables.source, tables.drift, tables.c, tables.rho_c)
    return float(obj.f_star_from(v, best))


def lambda_minus(v: float, tables: FluxTables) -> float:
    """Smallest maximiser of ``lam -> (p-q) lam - v Rbar(lam)``."""
    if v < 0:
        raise ModelError("lambda_minus is defined for v >= 0")
    if v == 0:
        return tables.c
    if tables.finite and tables.v0 is not None and v < tables.v0:
        return tables.c
    _, h = _scalar_argmax(tables, v)
    return tables.c - h


def front_speed_v0(tables: FluxTables) -> tuple[float, float]:
    _require_finite(tables, "v0")
    return tables.v0, tables.lambda0


def check_condition_H(tables: FluxTables) -> bool:
    _require_finite(tables, "condition (H)")
    return tables.H_holds


def concave_envelope_f_hat(rho: float, tables: FluxTables) -> float:
    """``f_hat(rho) = inf_{v >= 0} [rho v + f*(v)]``."""
    _require_finite(tables, "f_hat")
    if rho < 0 or rho > tables.rho_c * (1 + 1e-15):
        raise ModelError("density outside [0, rho_c]")
    G = rho * tables.v_grid + tables.f_star
    k = int(np.argmin(G))
    best = float(G[k])
    if k == 0:
        return min(best, tables.drift * tables.c)
    lo = float(tables.v_grid[k - 1])
    hi = float(tables.v_grid[min(k + 1, tables.v_grid.size - 1)])
    res = minimize_scalar(lambda vv: rho * vv + legendre_f_star(vv, tables), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    return min(best, float(res.fun))


def necessity_bound(rho: float, tables: FluxTables, z_grid: np.ndarray | None = None) -> tuple[float, float]:
    """``min_z [rho z + f*(z)]`` by direct scalar minimisation over a z-grid.

    Independent of the tabulated envelope: every ``f*(z)`` is recomputed by
    the scalar Legendre routine.
    """
    _require_finite(tables, "necessity bound")
    if z_grid is None:
        z_grid = np.linspace(0.0, tables.v_grid[-1], 257)
    vals = np.array([rho * z + legendre_f_star(float(z), tables) for z in z_grid])
    k = int(np.argmin(vals))
    best, z_best = float(vals[k]), float(z_grid[k])
    if 0 < k < z_grid.size - 1:
        res = minimize_scalar(lambda z: rho * z + legendre_f_star(z, tables),
                              bounds=(float(z_grid[k - 1]), float(z_grid[k + 1])), method="bounded",
                              options={"xatol": 1e-12})
        if res.fun < best:
            best, z_best = float(res.fun), float(res.x)
    return best, z_best
