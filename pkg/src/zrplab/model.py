"""Domain types: rate functions, jump kernels, disorder laws, environments
and particle configurations.

Occupancies are stored as ``int64`` arrays.  Source/sink sites carry the
sentinel :data:`INFINITY`, which compares larger than any reachable
particle count, so coordinatewise order between configurations is plain
integer order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INFINITY = np.int64(2**62)
"""Occupancy sentinel for sites holding infinitely many particles."""


class ModelError(ValueError):
    """Raised when a constructor receives data violating a model invariant."""


class LiminfWarning(UserWarning):
    """The environment cannot witness ``liminf alpha = c`` in its window."""


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Bounded nondecreasing jump-rate function ``g`` with ``g_inf = 1``.

    ``values`` tabulates ``g(0..N_g)``; beyond the table ``g(n) = 1``.
    ``tail_tolerance`` records ``1 - g(N_g)``, the error committed by
    replacing the true tail with its limit.
    """

    values: np.ndarray
    tail_tolerance: float = 0.0
    name: str = "table"

    def __post_init__(self):
        v = _frozen(self.values, float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 2:
            raise ModelError("rate table needs at least g(0) and g(1)")
        if v[0] != 0.0 or not v[1] > 0.0:
            raise ModelError("rate function must satisfy g(0) = 0 < g(1)")
        if np.any(np.diff(v) < 0):
            raise ModelError("rate function must be nondecreasing")
        if v[-1] > 1.0 + 1e-15:
            raise ModelError("rate function exceeds its limit g_inf = 1")

    @property
    def g_inf(self) -> float:
        return 1.0

    @property
    def n_g(self) -> int:
        """Truncation index ``N_g``."""
        return self.values.size - 1

    def __call__(self, n):
        n = np.asarray(n, dtype=np.int64)
        idx = np.minimum(n, self.n_g)
        out = np.where(n > self.n_g, 1.0, self.values[idx])
        return out if out.ndim else float(out)

    def factorial_weights(self) -> np.ndarray:
        """``1/g(n)!`` for ``n = 0..N_g``; constant beyond ``N_g``."""
        w = np.ones(self.n_g + 1)
        w[1:] = 1.0 / np.cumprod(self.values[1:])
        return w

    @property
    def increments_nonincreasing(self) -> bool:
        """Sufficient condition for strict convexity of the mean density ``R``."""
        inc = np.diff(np.append(self.values, 1.0))
        return bool(np.all(np.diff(inc) <= 1e-15))

    def __eq__(self, other):
        if not isinstance(other, RateFunction):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.tail_tolerance == other.tail_tolerance
            and self.name == other.name
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.tail_tolerance, self.name))

    def to_dict(self) -> dict:
        return {"name": self.name, "table": self.values.tolist(), "tail_tolerance": self.tail_tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "RateFunction":
        kind = d.get("kind")
        if kind is not None:
            return rate_function_from_spec(d)
        return cls(np.asarray(d["table"], float), float(d.get("tail_tolerance", 0.0)), d.get("name", "table"))


def normalize_rate_function(raw: Sequence[float], g_inf: float | None = None, name: str = "table") -> RateFunction:
    """Divide a raw rate table by its limit so that ``g_inf = 1``.

    If ``g_inf`` is omitted the table maximum is used, i.e. the table is
    assumed to have reached its limit.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 2:
        raise ModelError("rate table needs at least g(0) and g(1)")
    if raw[0] != 0.0:
        raise ModelError("g(0) must be 0")
    if not raw[1] > 0.0:
        raise ModelError("g(1) must be positive")
    if np.any(np.diff(raw) < 0):
        raise ModelError("rate table is decreasing somewhere")
    limit = float(raw.max()) if g_inf is None else float(g_inf)
    if limit < raw.max() * (1 - 1e-15):
        raise ModelError("declared limit g_inf is below the table maximum")
    values = np.minimum(raw / limit, 1.0)
    return RateFunction(values, tail_tolerance=float(1.0 - values[-1]), name=name)


def constant_rate() -> RateFunction:
    """``g(n) = 1{n >= 1}``."""
    return RateFunction(np.array([0.0, 1.0]), name="constant")


def capped_linear_rate(m: int) -> RateFunction:
    """``g(n) = min(n, m)/m``."""
    return normalize_rate_function(np.minimum(np.arange(m + 1), m), name=f"capped_linear_{m}")


def saturating_rate(tol: float = 1e-13) -> RateFunction:
    """``g(n) = 1 - 2^-n``, i.e. ``2 - 2^(1-n)`` normalised by its limit 2."""
    n_g = int(math.ceil(-math.log2(tol)))
    n = np.arange(n_g + 1)
    raw = np.where(n == 0, 0.0, 2.0 - 2.0 ** (1.0 - n))
    return normalize_rate_function(raw, g_inf=2.0, name="saturating")


SHIPPED_RATE_FUNCTIONS = ("constant", "capped_linear_2", "capped_linear_3", "saturating")


def rate_function_from_spec(spec: dict | str) -> RateFunction:
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return constant_rate()
    if kind.startswith("capped_linear"):
        m = int(spec.get("m", kind.rsplit("_", 1)[-1] if kind != "capped_linear" else 2))
        return capped_linear_rate(m)
    if kind == "saturating":
        return saturating_rate()
    if kind == "table":
        return normalize_rate_function(spec["table"], spec.get("g_inf"))
    raise ModelError(f"unknown rate function kind {kind!r}")


# ---------------------------------------------------------------------------
# jump kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpKernel:
    displacements: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        z = tuple(int(v) for v in self.displacements)
        pr = tuple(float(v) for v in self.probabilities)
        object.__setattr__(self, "displacements", z)
        object.__setattr__(self, "probabilities", pr)
        if len(z) != len(pr) or not z:
            raise ModelError("kernel needs matching nonempty support and probabilities")
        if len(set(z)) != len(z):
            raise ModelError("kernel support has repeated displacements")
        if any(p < 0 or p > 1 for p in pr):
            raise ModelError("kernel probabilities must lie in [0, 1]")
        if abs(math.fsum(pr) - 1.0) > 1e-12:
            raise ModelError("kernel probabilities must sum to 1")
        if 0 in z and len(z) == 1:
            raise ModelError("kernel cannot be concentrated on z = 0")

    @classmethod
    def nearest_neighbour(cls, p: float) -> "JumpKernel":
        if not 0.5 < p <= 1.0:
            raise ModelError("nearest-neighbour kernel needs p in (1/2, 1]")
        if p == 1.0:
            return cls((1,), (1.0,))
        return cls((1, -1), (p, 1.0 - p))

    @property
    def p(self) -> float:
        return self.prob(1)

    @property
    def q(self) -> float:
        return self.prob(-1)

    def prob(self, z: int) -> float:
        for zi, pi in zip(self.displacements, self.probabilities):
            if zi == z:
                return pi
        return 0.0

    @property
    def is_nearest_neighbour(self) -> bool:
        support = {z for z, p in zip(self.displacements, self.probabilities) if p > 0}
        return support <= {-1, 1} and self.p > 0.5

    @property
    def is_totally_asymmetric(self) -> bool:
        return all(z >= 1 for z, p in zip(self.displacements, self.probabilities) if p > 0)

    @property
    def drift(self) -> float:
        if self.is_nearest_neighbour:
            return 2.0 * self.p - 1.0
        return math.fsum(z * p for z, p in zip(self.displacements, self.probabilities))

    @property
    def max_range(self) -> int:
        return max(abs(z) for z in self.displacements)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if len(self.displacements) == 1:
            return np.full(size, self.displacements[0], dtype=np.int64)
        return rng.choice(np.asarray(self.displacements, np.int64), size=size, p=np.asarray(self.probabilities))

    def to_dict(self) -> dict:
        return {"displacements": list(self.displacements), "probabilities": list(self.probabilities)}

    @classmethod
    def from_dict(cls, d: dict) -> "JumpKernel":
        if "displacements" in d:
            return cls(tuple(d["displacements"]), tuple(d["probabilities"]))
        return cls.nearest_neighbour(float(d["p"]))


# ---------------------------------------------------------------------------
# disorder laws
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


@dataclass(frozen=True)
class PointMixture:
    """Finitely supported disorder law ``sum_i w_i delta_{a_i}`` on ``(c, 1]``."""

    atoms: tuple[float, ...]
    weights: tuple[float, ...]
    c: float

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(float(a) for a in self.atoms))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        _check_c(self.c)
        if len(self.atoms) != len(self.weights) or not self.atoms:
            raise ModelError("point mixture needs matching atoms and weights")
        if any(w < 0 for w in self.weights) or abs(math.fsum(self.weights) - 1) > 1e-12:
            raise ModelError("mixture weights must be a probability vector")
        if any(not (self.c < a <= 1.0) for a, w in zip(self.atoms, self.weights) if w > 0):
            raise ModelError("disorder law puts mass outside (c, 1]")

    @property
    def essential_infimum(self) -> float:
        return min(a for a, w in zip(self.atoms, self.weights) if w > 0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.asarray(self.atoms), size=size, p=np.asarray(self.weights))

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights such that ``E f(alpha) = sum w f(node)``."""
        return np.asarray(self.atoms), np.asarray(self.weights)

    def quadrature_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes as ``alpha - c`` together with their weights."""
        w = np.asarray(self.weights)
        keep = w > 0
        return np.asarray(self.atoms)[keep] - self.c, w[keep]

    def to_dict(self) -> dict:
        return {"law": "point", "c": self.c, "atoms": list(self.atoms), "weights": list(self.weights)}


@dataclass(frozen=True)
class PowerLaw:
    """Disorder law with density proportional to ``(alpha - c)^k`` on ``(c, 1]``.

    Sampling is by inverse CDF.  Expectations use composite Gauss-Legendre
    quadrature on dyadic panels graded towards ``alpha = c``, where the
    integrands of interest become singular as the fugacity approaches ``c``.
    """

    c: float
    k: float = 0.0
    panels: int = 64

    def __post_init__(self):
        _check_c(self.c)
        if self.k < 0:
            raise ModelError("density exponent k must be nonnegative")

    @property
    def essential_infimum(self) -> float:
        return self.c

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = 1.0 - rng.random(size)  # (0, 1]
        return self.c + (1.0 - self.c) * u ** (1.0 / (self.k + 1.0))

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        off, w = self.quadrature_offsets()
        return self.c + off, w

    def quadrature_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        # s = (alpha - c)/(1 - c) has density (k+1) s^k on (0, 1]
        edges = np.concatenate([2.0 ** -np.arange(self.panels, dtype=float), [0.0]])
        hi, lo = edges[:-1], edges[1:]
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        w = w * (self.k + 1.0) * s**self.k
        return (1.0 - self.c) * s, w

    def to_dict(self) -> dict:
        return {"law": "power", "c": self.c, "k": self.k}


DisorderLaw = PointMixture | PowerLaw


def _check_c(c: float) -> None:
    if not 0.0 < c < 1.0:
        raise ModelError("c must lie in (0, 1)")


def disorder_law_from_dict(d: dict) -> DisorderLaw:
    kind = d.get("law", "power")
    if kind == "power":
        return PowerLaw(float(d["c"]), float(d.get("k", 0.0)))
    if kind == "point":
        return PointMixture(tuple(d["atoms"]), tuple(d.get("weights", [1.0])), float(d["c"]))
    raise ModelError(f"unknown disorder law {kind!r}")


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Environment:
    """Site rates ``alpha(x)`` on the integer window ``[left, left + len(alpha) - 1]``."""

    left: int
    alpha: np.ndarray
    c: float
    slow_sites: tuple[int, ...] | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        a = _frozen(self.alpha, float)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "left", int(self.left))
        _check_c(self.c)
        if a.ndim != 1 or a.size == 0:
            raise ModelError("environment needs a nonempty window")
        if np.any(a <= self.c) or np.any(a > 1.0):
            raise ModelError("environment rates must lie in (c, 1]")
        if self.slow_sites is not None:
            object.__setattr__(self, "slow_sites", tuple(int(x) for x in self.slow_sites))

    @property
    def right(self) -> int:
        return self.left + self.alpha.size - 1

    @property
    def window(self) -> tuple[int, int]:
        return self.left, self.right

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.left, self.right + 1)

    def __len__(self) -> int:
        return self.alpha.size

    def contains(self, x: int) -> bool:
        return self.left <= x <= self.right

    def index(self, x):
        x = np.asarray(x)
        if np.any(x < self.left) or np.any(x > self.right):
            raise ModelError(f"site outside environment window {self.window}")
        return x - self.left

    def __getitem__(self, x: int) -> float:
        return float(self.alpha[self.index(x)])

    def with_rates(self, overrides: dict[int, float]) -> "Environment":
        a = self.alpha.copy()
        for x, r in overrides.items():
            a[self.index(x)] = r
        return Environment(self.left, a, self.c, self.slow_sites, self.notes)

    def restrict(self, left: int, right: int) -> "Environment":
        i, j = self.index(left), self.index(right)
        slow = None if self.slow_sites is None else tuple(x for x in self.slow_sites if left <= x <= right)
        return Environment(left, self.alpha[i : j + 1], self.c, slow or None, self.notes)

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.left == other.left
            and self.c == other.c
            and np.array_equal(self.alpha, other.alpha)
            and self.slow_sites == other.slow_sites
            and self.notes == other.notes
        )

    def __hash__(self):
        return hash((self.left, self.c, self.alpha.tobytes(), self.slow_sites))

    def to_dict(self) -> dict:
        d = {"left": self.left, "c": self.c, "alpha": self.alpha.tolist()}
        if self.slow_sites is not None:
            d["slow_sites"] = list(self.slow_sites)
        if self.notes:
            d["notes"] = list(self.notes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        slow = d.get("slow_sites")
        return cls(int(d["left"]), np.asarray(d["alpha"], float), float(d["c"]),
                   None if slow is None else tuple(slow), tuple(d.get("notes", ())))


def build_environment_iid(law: DisorderLaw, window: tuple[int, int], seed: int) -> Environment:
    """Fill ``window`` with i.i.d. draws from ``law``.

    A law whose essential infimum exceeds ``c`` cannot produce
    ``liminf alpha = c``; that is reported as a :class:`LiminfWarning` and
    recorded in ``Environment.notes``.
    """
    left, right = int(window[0]), int(window[1])
    if right < left:
        raise ModelError("empty window")
    rng = np.random.default_rng(seed)
    alpha = law.sample(rng, right - left + 1)
    notes = ()
    if law.essential_infimum > law.c:
        msg = "liminf witness absent: disorder law is bounded away from c"
        warnings.warn(msg, LiminfWarning, stacklevel=2)
        notes = (msg,)
    return Environment(left, alpha, law.c, None, notes)


def slow_site_ratios_converge(sites: Sequence[int]) -> bool:
    """Heuristic check that ``x_{n+1}/x_n -> 1`` over a finite prefix.

    The defects ``|x_{n+1}/x_n - 1|`` must either be small in the last
    third of the prefix (below 0.01) or have at least halved compared with
    the first third.
    """
    x = np.asarray(sites, float)
    if x.size < 4:
        return False
    defect = np.abs(x[1:] / x[:-1] - 1.0)
    third = max(1, defect.size // 3)
    head, tail = defect[:third].mean(), defect[-third:].mean()
    return bool(tail < 0.01 or tail <= 0.5 * head)


def build_environment_with_slow_sites(base: Environment, schedule: Sequence[tuple[int, float]]) -> Environment:
    """Override ``base`` at the scheduled slow sites and record the witness."""
    if not schedule:
        return base
    sites = [int(s) for s, _ in schedule]
    rates = [float(r) for _, r in schedule]
    if any(s >= 0 for s in sites):
        raise ModelError("slow sites must be negative")
    if any(b >= a for a, b in zip(sites, sites[1:])):
        raise ModelError("slow sites must be strictly decreasing")
    if any(not (base.c < r <= 1.0) for r in rates):
        raise ModelError("slow-site rates must lie in (c, 1]")
    notes = [n for n in base.notes if not n.startswith("liminf witness")]
    if not slow_site_ratios_converge(sites):
        msg = "slow-site ratios x_{n+1}/x_n do not approach 1 on the recorded prefix"
        warnings.warn(msg, LiminfWarning, stacklevel=2)
        notes.append(msg)
    if any(b > a for a, b in zip(rates, rates[1:])):
        msg = "slow-site rates are not decreasing towards c"
        warnings.warn(msg, LiminfWarning, stacklevel=2)
        notes.append(msg)
    env = base.with_rates(dict(zip(sites, rates)))
    return Environment(env.left, env.alpha, env.c, tuple(sites), tuple(notes))


def slow_site_schedule(form: str, c: float, n_max: int, n_min: int = 1, scale: int = 1) -> list[tuple[int, float]]:
    """Witness schedules ``(x_n, c + 1/(n+2))`` for ``n_min <= n <= n_max``.

    Positions use the shifted index ``k = n - n_min + 1``: ``form`` is
    ``"linear"`` (``x_n = -scale*k``) or ``"quadratic"`` (``x_n = -scale*k^2``).
    A large ``n_min`` places sites with rates already close to ``c`` near
    the origin.
    """
    if n_min < 0 or n_max < n_min:
        raise ModelError("need 0 <= n_min <= n_max")
    ns = range(n_min, n_max + 1)
    ks = [n - n_min + 1 for n in ns]
    if form == "linear":
        xs = [-scale * k for k in ks]
    elif form == "quadratic":
        xs = [-scale * k * k for k in ks]
    else:
        raise ModelError(f"unknown slow-site form {form!r}")
    return [(x, c + 1.0 / (n + 2)) for x, n in zip(xs, ns)]


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Configuration:
    """Occupancy numbers on ``[left, left + len(occupancy) - 1]``."""

    left: int
    occupancy: np.ndarray

    def __post_init__(self):
        occ = _frozen(self.occupancy, np.int64)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "left", int(self.left))
        if occ.ndim != 1:
            raise ModelError("occupancy must be one-dimensional")
        if np.any(occ < 0) or np.any(occ > INFINITY):
            raise ModelError("occupancies must be nonnegative integers or INFINITY")

    @property
    def right(self) -> int:
        return self.left + self.occupancy.size - 1

    @property
    def window(self) -> tuple[int, int]:
        return self.left, self.right

    def __len__(self):
        return self.occupancy.size

    def __getitem__(self, x: int) -> int:
        if not self.left <= x <= self.right:
            return 0
        return int(self.occupancy[x - self.left])

    @property
    def infinite_sites(self) -> np.ndarray:
        return self.left + np.flatnonzero(self.occupancy == INFINITY)

    def total_mass(self, lo: int | None = None, hi: int | None = None) -> int:
        lo = self.left if lo is None else max(lo, self.left)
        hi = self.right if hi is None else min(hi, self.right)
        block = self.occupancy[lo - self.left : hi - self.left + 1]
        if np.any(block == INFINITY):
            raise ModelError("mass query over a range containing INFINITY sites")
        return int(block.sum())

    def jump(self, x: int, y: int) -> "Configuration":
        """The configuration ``eta^{x,y}`` after a particle jumps from x to y."""
        nx, ny = self[x], self[y]
        if nx == 0:
            raise ModelError(f"no particle at site {x}")
        occ = self.occupancy.copy()
        if nx != INFINITY:
            occ[x - self.left] -= 1
        if self.left <= y <= self.right and ny != INFINITY:
            occ[y - self.left] += 1
        return Configuration(self.left, occ)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.left == other.left and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash((self.left, self.occupancy.tobytes()))

    def __le__(self, other: "Configuration") -> bool:
        if self.window != other.window:
            raise ModelError("ordering needs configurations on the same window")
        return bool(np.all(self.occupancy <= other.occupancy))

    def to_dict(self) -> dict:
        occ = ["inf" if v == INFINITY else int(v) for v in self.occupancy]
        return {"left": self.left, "occupancy": occ}

    @classmethod
    def from_dict(cls, d: dict) -> "Configuration":
        occ = [INFINITY if v in ("inf", "INFINITY") else int(v) for v in d["occupancy"]]
        return cls(int(d["left"]), np.asarray(occ, np.int64))

    @classmethod
    def zeros(cls, window: tuple[int, int]) -> "Configuration":
        return cls(window[0], np.zeros(window[1] - window[0] + 1, np.int64))

    @classmethod
    def source_block(cls, window: tuple[int, int], edge: int) -> "Configuration":
        """``(+inf) 1{x <= edge}`` restricted to ``window``."""
        sites = np.arange(window[0], window[1] + 1)
        return cls(window[0], np.where(sites <= edge, INFINITY, 0).astype(np.int64))
