"""One-site laws theta_x(n) = x^n / (g(n)! Z(x)) and their product measures.

All series are evaluated as a finite polynomial over the rate table plus
the exact geometric tail: beyond the truncation index ``N_g`` the rate is
constant 1, so ``x^n/g(n)!`` is ``w_N x^n`` with ``w_N = 1/g(N_g)!`` and the
tail sums of ``1, n, n^2`` times ``x^n`` have closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .model import Configuration, Environment, ModelError, RateFunction

TAIL_TOLERANCE = 1e-13


class DivergenceError(ModelError):
    """Fugacity at or above the rate limit: the one-site series diverges."""


def _check_domain(x: np.ndarray) -> None:
    if np.any(x < 0):
        raise ModelError("fugacity must be nonnegative")
    if np.any(x >= 1.0):
        raise DivergenceError("partition function diverges for fugacity >= g_inf = 1")


def _series(x, g: RateFunction, d=None):
    """Unnormalised sums  sum_n x^n/g(n)!,  sum_n n x^n/g(n)!,  sum_n n^2 x^n/g(n)!.

    ``d`` optionally supplies ``1 - x`` computed without cancellation by the
    caller; it only enters the geometric tail.
    """
    x = np.asarray(x, dtype=float)
    if d is None:
        _check_domain(x)
    elif np.any(np.asarray(d) <= 0) or np.any(x < 0):
        raise DivergenceError("partition function diverges for fugacity >= g_inf = 1")
    w = g.factorial_weights()
    n = np.arange(w.size, dtype=float)
    s0 = P.polyval(x, w)
    s1 = P.polyval(x, n * w)
    s2 = P.polyval(x, n * n * w)
    m = float(w.size)  # first index of the tail
    wn = w[-1]
    xm = x**m
    d = 1.0 - x if d is None else np.asarray(d, dtype=float)
    s0 = s0 + wn * xm / d
    s1 = s1 + wn * xm * (m - (m - 1.0) * x) / d**2
    s2 = s2 + wn * xm * (m * m - (2 * m * m - 2 * m - 1) * x + (m - 1) ** 2 * x * x) / d**3
    return s0, s1, s2


def partition_function(lam, g: RateFunction):
    """``Z(lam) = sum_n lam^n / g(n)!``."""
    z, _, _ = _series(lam, g)
    return z if np.ndim(z) else float(z)


def mean_occupancy_R(lam, g: RateFunction):
    """Mean ``R(lam)`` of the one-site law."""
    z, s1, _ = _series(lam, g)
    r = s1 / z
    return r if np.ndim(r) else float(r)


def variance_occupancy(lam, g: RateFunction):
    z, s1, s2 = _series(lam, g)
    r = s1 / z
    v = np.maximum(s2 / z - r * r, 0.0)
    return v if np.ndim(v) else float(v)


def R_derivative(lam, g: RateFunction):
    """``R'(lam) = Var(lam)/lam`` (exponential family); ``R'(0) = 1/g(1)``."""
    lam = np.asarray(lam, dtype=float)
    var = np.asarray(variance_occupancy(lam, g))
    safe = np.where(lam > 0, lam, 1.0)
    out = np.where(lam > 0, var / safe, 1.0 / g.values[1])
    return out if out.ndim else float(out)


def mean_jump_rate(lam, g: RateFunction):
    """``sum_n g(n) theta_lam(n)``, computed term by term (equals ``lam``)."""
    x = np.asarray(lam, dtype=float)
    z, _, _ = _series(x, g)
    w = g.factorial_weights()
    gw = np.append(g.values, 1.0) * np.append(w, w[-1])
    head = P.polyval(x, gw)
    m = float(gw.size)
    tail = w[-1] * x**m / (1.0 - x)
    out = (head + tail) / z
    return out if out.ndim else float(out)


def _R_precise(x, d, g: RateFunction):
    z, s1, _ = _series(x, g, d)
    return s1 / z


def _Rprime_precise(x, d, g: RateFunction):
    z, s1, s2 = _series(x, g, d)
    r = s1 / z
    var = np.maximum(s2 / z - r * r, 0.0)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, var / safe, 1.0 / g.values[1])


_GL8_T, _GL8_W = np.polynomial.legendre.leggauss(8)
_GL8_T = 0.5 * (_GL8_T + 1.0)
_GL8_W = 0.5 * _GL8_W


def R_drop(x_top, d_top, dx, g: RateFunction):
    """``R(x_top) - R(x_top - dx)`` without catastrophic cancellation.

    ``d_top = 1 - x_top`` is passed exactly.  When ``dx`` is small compared
    with the distance to the singularity the difference is integrated from
    ``R'`` with an 8-point Gauss rule, which is exact to rounding there.
    """
    x_top, d_top, dx = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x_top, d_top, dx)))
    direct = _R_precise(x_top, d_top, g) - _R_precise(np.maximum(x_top - dx, 0.0), d_top + dx, g)
    small = dx < 0.05 * d_top
    if not np.any(small):
        return direct
    xs, ds, hs = x_top[small][..., None], d_top[small][..., None], dx[small][..., None]
    xi = xs - hs * _GL8_T
    integral = (_Rprime_precise(xi, ds + hs * _GL8_T, g) * _GL8_W).sum(axis=-1) * hs[..., 0]
    out = direct.copy()
    out[small] = integral
    return out


def inverse_R(rho, g: RateFunction, tol: float = 1e-14):
    """Fugacity ``x`` with ``R(x) = rho`` by bisection on the increasing map ``R``."""
    rho = np.asarray(rho, dtype=float)
    lo = np.zeros_like(rho)
    hi = np.full_like(rho, 1.0 - 1e-16)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = np.asarray(mean_occupancy_R(mid, g)) < rho
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < tol):
            break
    out = 0.5 * (lo + hi)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# one-site laws and product measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OneSiteLaw:
    """``theta_x`` tabulated on ``0..N_cut`` with the remaining mass recorded."""

    lambda_over_alpha: float
    pmf: np.ndarray
    tail_mass: float
    mean: float

    @classmethod
    def build(cls, x: float, g: RateFunction, tol: float = TAIL_TOLERANCE) -> "OneSiteLaw":
        x = float(x)
        _check_domain(np.asarray(x))
        z, s1, _ = _series(x, g)
        w = g.factorial_weights()
        if x == 0.0:
            return cls(0.0, np.array([1.0]), 0.0, 0.0)
        # tail beyond n >= N_g+1 is w_N x^n; choose N_cut with tail mass < tol
        n_head = w.size
        log_x = np.log(x)
        need = np.log(tol * z * (1.0 - x) / w[-1]) / log_x if w[-1] > 0 else 0.0
        n_cut = max(n_head - 1, int(np.ceil(need)))
        n = np.arange(n_cut + 1)
        wt = np.where(n < n_head, w[np.minimum(n, n_head - 1)], w[-1])
        pmf = wt * np.exp(n * log_x) / z
        tail = float(w[-1] * x ** (n_cut + 1) / (1.0 - x) / z)
        return cls(x, pmf, tail, float(s1 / z))

    @property
    def n_cut(self) -> int:
        return self.pmf.size - 1

    def prob_at_least(self, k: int) -> float:
        """``P(eta >= k)``."""
        if k <= 0:
            return 1.0
        if k > self.n_cut:
            return self.tail_mass
        return float(max(0.0, 1.0 - self.pmf[:k].sum()))

    def expect_min(self, m: int) -> float:
        """``E min(eta, m)`` as ``sum_{k=1}^m P(eta >= k)``."""
        return float(sum(self.prob_at_least(k) for k in range(1, m + 1)))

    def variance(self) -> float:
        n = np.arange(self.pmf.size)
        return float((self.pmf * (n - self.mean) ** 2).sum())

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0  # tail lumped into the last bin
        return c


@dataclass(frozen=True, eq=False)
class ProductMeasure:
    """Product law on ``[left, left+len-1]`` with site marginal ``theta_{params[i]}``."""

    left: int
    params: np.ndarray
    g: RateFunction
    _laws: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        p = np.array(self.params, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        if np.any(p < 0):
            raise ModelError("negative marginal parameter")
        if np.any(p >= 1.0):
            raise DivergenceError("marginal parameter >= 1: measure does not exist")

    @classmethod
    def from_environment(cls, env: Environment, lam: float, g: RateFunction) -> "ProductMeasure":
        """``mu_lam^alpha`` restricted to the environment window."""
        return cls(env.left, lam / env.alpha, g)

    @property
    def right(self) -> int:
        return self.left + self.params.size - 1

    @property
    def window(self) -> tuple[int, int]:
        return self.left, self.right

    def marginal(self, x: int) -> OneSiteLaw:
        if not self.left <= x <= self.right:
            raise ModelError(f"site {x} outside measure window {self.window}")
        law = self._laws.get(x)
        if law is None:
            law = OneSiteLaw.build(self.params[x - self.left], self.g)
            self._laws[x] = law
        return law

    def means(self) -> np.ndarray:
        return np.asarray(mean_occupancy_R(self.params, self.g))

    def variances(self) -> np.ndarray:
        return np.asarray(variance_occupancy(self.params, self.g))

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent configurations as an int64 array ``(size, sites)``."""
        out = np.empty((size, self.params.size), dtype=np.int64)
        cache: dict[float, np.ndarray] = {}
        u = rng.random((size, self.params.size))
        for i, x in enumerate(self.params):
            cdf = cache.get(x)
            if cdf is None:
                cdf = self.marginal(self.left + i).cdf()
                cache[x] = cdf
            out[:, i] = np.searchsorted(cdf, u[:, i], side="right")
        return out


def sample_product_measure(mu: ProductMeasure, seed: int) -> Configuration:
    rng = np.random.default_rng(seed)
    return Configuration(mu.left, mu.sample_array(rng, 1)[0])


# ---------------------------------------------------------------------------
# local monotone observables
# ---------------------------------------------------------------------------

OBSERVABLE_KINDS = ("min_cap", "threshold")


@dataclass(frozen=True)
class Factor:
    site: int
    kind: str
    param: int

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ModelError(f"unknown observable kind {self.kind!r}")
        if self.param < 1:
            raise ModelError("observable parameter must be >= 1")

    def evaluate(self, occ: np.ndarray) -> np.ndarray:
        occ = np.asarray(occ)
        if self.kind == "min_cap":
            return np.minimum(occ, self.param).astype(float)
        return (occ >= self.param).astype(float)

    def expectation(self, law: OneSiteLaw) -> float:
        if self.kind == "min_cap":
            return law.expect_min(self.param)
        return law.prob_at_least(self.param)


@dataclass(frozen=True)
class LocalObservable:
    """Product of bounded nondecreasing one-site functions over disjoint sites."""

    factors: tuple[Factor, ...]
    name: str = ""

    def __post_init__(self):
        sites = [f.site for f in self.factors]
        if len(set(sites)) != len(sites):
            raise ModelError("observable factors must act on disjoint sites")
        if not self.name:
            label = "*".join(f"{f.kind}({f.site},{f.param})" for f in self.factors) or "one"
            object.__setattr__(self, "name", label)

    @classmethod
    def single(cls, site: int, kind: str, param: int) -> "LocalObservable":
        return cls((Factor(int(site), kind, int(param)),))

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(f.site for f in self.factors)

    def shifted(self, dx: int) -> "LocalObservable":
        return LocalObservable(tuple(Factor(f.site + dx, f.kind, f.param) for f in self.factors))

    def evaluate(self, occupancy: np.ndarray, left: int) -> np.ndarray:
        """Values on an ensemble array ``(replicas, sites)`` whose first column is ``left``."""
        occupancy = np.atleast_2d(occupancy)
        out = np.ones(occupancy.shape[0])
        for f in self.factors:
            j = f.site - left
            if not 0 <= j < occupancy.shape[1]:
                raise ModelError(f"observable site {f.site} outside the ensemble window")
            out *= f.evaluate(occupancy[:, j])
        return out


def exact_expectation(mu: ProductMeasure, h: LocalObservable) -> float:
    val = 1.0
    for f in h.factors:
        val *= f.expectation(mu.marginal(f.site))
    return val


def parse_observables(rows: Iterable[Sequence]) -> list[LocalObservable]:
    """Observables from scenario rows ``(site, kind, param)``; rows may be
    nested lists of such triples for product observables."""
    out = []
    for row in rows:
        if row and isinstance(row[0], (list, tuple)):
            out.append(LocalObservable(tuple(Factor(int(s), str(k), int(p)) for s, k, p in row)))
        else:
            s, k, p = row
            out.append(LocalObservable.single(int(s), str(k), int(p)))
    return out
