"""Scenario files: TOML with sections ``[experiment]``, ``[seed]``,
``[environment]``, ``[kernel]``, ``[rate_function]``, ``[initial]``,
``[parameters]`` and an array of ``[[observables]]`` tables.

Example::

    [experiment]
    kind = "upper_bound"
    replicas = 500
    horizons = [50.0, 100.0, 200.0]

    [seed]
    value = 7

    [environment]
    seed = 11                       # environment draw, fixed across replicas
    law = { law = "point", c = 0.5, atoms = [1.0] }
    slow_sites = { form = "quadratic", n_min = 200, n_max = 230 }

    [kernel]
    p = 1.0                         # or displacements / probabilities

    [rate_function]
    kind = "constant"

    [initial]
    kind = "deterministic_profile"
    density_factor = 2.0

    [[observables]]
    site = 0
    kind = "threshold"
    param = 1

Field reference:

* ``environment.law``: disorder law of the base environment (``power`` with
  ``c, k`` or ``point`` with ``c, atoms, weights``).
* ``environment.slow_sites``: optional witness schedule ``form, n_min,
  n_max, scale``; rates ``c + 1/(n+2)``.
* ``environment.window``: optional ``[left, right]``; otherwise each
  experiment sizes the window from its horizon and ``parameters.V``.
* ``initial.kind``: ``empty``, ``deterministic_profile`` (``density`` or
  ``density_factor`` times rho_c, up to ``edge``) or ``product_measure``
  (``fugacity``, a number or ``"c"``, or ``density`` / ``density_fraction``,
  up to ``edge``).  Source and counterexample runs build their own initial
  configurations.
* ``observables``: ``site, kind in {min_cap, threshold}, param``; a
  ``factors`` list of such tables gives a product observable.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .equilibria import LocalObservable, parse_observables
from .harris import DEFAULT_V
from .model import (
    Environment,
    JumpKernel,
    ModelError,
    RateFunction,
    build_environment_iid,
    build_environment_with_slow_sites,
    disorder_law_from_dict,
    rate_function_from_spec,
    slow_site_schedule,
)

KINDS = (
    "tables",
    "upper_bound",
    "necessity",
    "counterexample",
    "source_hydro",
    "local_equilibrium",
    "jackson_stationarity",
    "coupling_audits",
    "domination_probe",
)


@dataclass
class Scenario:
    kind: str
    environment: dict
    kernel: dict
    rate_function: dict
    seed: int
    replicas: int = 100
    horizons: list = field(default_factory=lambda: [25.0, 50.0, 100.0, 200.0])
    initial: dict = field(default_factory=dict)
    observables: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown experiment kind {self.kind!r}")
        if self.replicas < 1:
            raise ModelError("replicas must be positive")
        if not self.horizons or any(t <= 0 for t in self.horizons):
            raise ModelError("horizons must be positive")
        self.horizons = sorted(float(t) for t in self.horizons)
        if not 0 <= int(self.seed) < 2**64:
            raise ModelError("seed must be an unsigned 64-bit integer")
        self.seed = int(self.seed)

    @property
    def horizon(self) -> float:
        return self.horizons[-1]

    @property
    def V(self) -> float:
        return float(self.parameters.get("V", DEFAULT_V))

    @property
    def c(self) -> float:
        return float(self.environment["law"]["c"])

    def param(self, key, default=None):
        return self.parameters.get(key, default)

    def rate(self) -> RateFunction:
        return rate_function_from_spec(self.rate_function)

    def jump_kernel(self) -> JumpKernel:
        return JumpKernel.from_dict(self.kernel)

    def law(self):
        return disorder_law_from_dict(self.environment["law"])

    def environment_seed(self) -> int:
        return int(self.environment.get("seed", self.seed))

    def observable_list(self) -> list[LocalObservable]:
        rows = []
        for ob in self.observables:
            if "factors" in ob:
                rows.append([(f["site"], f["kind"], f["param"]) for f in ob["factors"]])
            else:
                rows.append((ob["site"], ob["kind"], ob["param"]))
        return parse_observables(rows)

    def build_environment(self, window: tuple[int, int] | None = None,
                          extra_slow: list[tuple[int, float]] | None = None) -> Environment:
        """Base i.i.d. environment on ``window`` (or ``environment.window``)
        plus the configured slow sites inside it."""
        if window is None:
            if "window" not in self.environment:
                raise ModelError("no window configured")
            window = tuple(self.environment["window"])
        env = build_environment_iid(self.law(), (int(window[0]), int(window[1])), self.environment_seed())
        sched = list(extra_slow or [])
        slow = self.environment.get("slow_sites")
        if slow:
            sched += slow_site_schedule(slow.get("form", "quadratic"), env.c, int(slow["n_max"]),
                                        int(slow.get("n_min", 1)), int(slow.get("scale", 1)))
        sched = sorted(((x, a) for x, a in sched if env.contains(x)), reverse=True)
        if sched:
            env = build_environment_with_slow_sites(env, sched)
        return env

    def with_overrides(self, seed: int | None = None, replicas: int | None = None) -> "Scenario":
        s = copy.deepcopy(self)
        if seed is not None:
            s.seed = int(seed)
        if replicas is not None:
            s.replicas = int(replicas)
        s.__post_init__()
        return s

    def to_dict(self) -> dict:
        d = {
            "experiment": {"kind": self.kind, "replicas": self.replicas, "horizons": list(self.horizons)},
            "seed": {"value": self.seed},
            "environment": copy.deepcopy(self.environment),
            "kernel": copy.deepcopy(self.kernel),
            "rate_function": copy.deepcopy(self.rate_function),
        }
        if self.name:
            d["experiment"]["name"] = self.name
        if self.initial:
            d["initial"] = copy.deepcopy(self.initial)
        if self.parameters:
            d["parameters"] = copy.deepcopy(self.parameters)
        if self.observables:
            d["observables"] = copy.deepcopy(self.observables)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        exp = d.get("experiment", {})
        for key in ("environment", "kernel", "rate_function"):
            if key not in d:
                raise ModelError(f"scenario lacks the [{key}] section")
        if "law" not in d["environment"]:
            raise ModelError("[environment] needs a law")
        return cls(
            kind=exp.get("kind", "tables"),
            environment=dict(d["environment"]),
            kernel=dict(d["kernel"]),
            rate_function=dict(d["rate_function"]),
            seed=int(d.get("seed", {}).get("value", 0)),
            replicas=int(exp.get("replicas", 100)),
            horizons=list(exp.get("horizons", [25.0, 50.0, 100.0, 200.0])),
            initial=dict(d.get("initial", {})),
            observables=list(d.get("observables", [])),
            parameters=dict(d.get("parameters", {})),
            name=exp.get("name", ""),
        )


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return Scenario.from_dict(tomli.load(fh))


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_bytes(tomli_w.dumps(scenario.to_dict()).encode())


def observable_rows(sites, kinds=(("threshold", 1), ("min_cap", 3))) -> list[dict]:
    return [{"site": int(s), "kind": k, "param": int(p)} for s in sites for k, p in kinds]


_POWER2 = {"law": "power", "c": 0.5, "k": 2.0}


def default_scenario(kind: str) -> Scenario:
    """Desk-scale scenario for each experiment kind."""
    nn1 = {"p": 1.0}
    const = {"kind": "constant"}
    if kind == "tables":
        return Scenario(kind, {"law": dict(_POWER2)}, nn1, const, seed=1, replicas=1, horizons=[1.0])
    if kind == "upper_bound":
        return Scenario(
            kind,
            {"seed": 11, "law": {"law": "point", "c": 0.5, "atoms": [1.0], "weights": [1.0]},
             "slow_sites": {"form": "quadratic", "n_min": 200, "n_max": 260, "scale": 1}},
            nn1, const, seed=2026, replicas=500, horizons=[50.0, 100.0, 200.0],
            initial={"kind": "deterministic_profile", "density_factor": 2.0, "edge": -1},
            observables=observable_rows(range(-1, 5)),
            parameters={"V": 3.0, "epsilon": 0.01},
            name="slow-site environment, supercritical left half",
        )
    if kind == "necessity":
        return Scenario(kind, {"seed": 12, "law": dict(_POWER2)}, nn1, const, seed=2027, replicas=500,
                        horizons=[25.0, 50.0, 100.0, 200.0],
                        initial={"kind": "product_measure", "density_fraction": 0.5, "edge": 0},
                        parameters={"V": 3.0}, name="subcritical product profile")
    if kind == "counterexample":
        return Scenario(kind, {"seed": 13, "law": dict(_POWER2)},
                        {"displacements": [1, 2], "probabilities": [0.5, 0.5]}, const, seed=2028, replicas=500,
                        horizons=[1.0], parameters={"V": 3.0, "n_max": 4, "d0": 6, "growth": "factorial"},
                        name="factorial spike blueprint")
    if kind in ("source_hydro", "local_equilibrium"):
        params = {"V": 3.0, "beta": -1.0, "v_grid": [0.2, 0.4, 0.6, 0.8], "local_eq_v": [0.05]}
        horizons = [125.0, 250.0, 500.0]
        if kind == "local_equilibrium":
            params["local_eq_v"] = [0.05, 0.2, 0.4]
            horizons = [500.0]
        return Scenario(kind, {"seed": 14, "law": dict(_POWER2)}, nn1, const, seed=2029, replicas=200,
                        horizons=horizons, observables=observable_rows(range(3)), parameters=params,
                        name="source at x_t = floor(beta t)")
    if kind == "jackson_stationarity":
        return Scenario(kind, {"seed": 15, "law": dict(_POWER2), "window": [0, 21]}, {"p": 0.75}, const,
                        seed=2030, replicas=200, horizons=[200.0],
                        parameters={"instances": 1000, "reservoir_alpha_l": 0.51, "reservoir_alpha_r": 0.52})
    if kind == "coupling_audits":
        return Scenario(kind, {"seed": 16, "law": dict(_POWER2)}, {"p": 0.75}, const, seed=2031, replicas=1,
                        horizons=[20.0], parameters={"V": 3.0, "instances": 1000, "instance_window": 40, "W": 3.0,
                                                     "propagation_time": 10.0, "propagation_trials": 1000})
    if kind == "domination_probe":
        return Scenario(kind, {"seed": 17, "law": dict(_POWER2)}, nn1, const, seed=2032, replicas=100,
                        horizons=[50.0, 100.0, 200.0], parameters={"V": 3.0, "epsilon": 0.1})
    raise ModelError(f"unknown experiment kind {kind!r}")
