"""Command-line entry point: ``zrplab <experiment> [--scenario FILE] ...``.

Each subcommand runs one experiment kind from a scenario file (or the
built-in desk-scale scenario) and writes ``verdicts.csv``, ``snapshots.csv``
and, when flux tables were built, ``tables.csv`` into ``--out``.  The exit
code is 1 iff some pass/fail verdict fails, 2 on invalid input.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import run_scenario
from .model import ModelError
from .scenario import default_scenario, dump_scenario, load_scenario

log = logging.getLogger("zrplab")

SUBCOMMANDS = {
    "tables": "tables",
    "upper-bound": "upper_bound",
    "necessity": "necessity",
    "counterexample": "counterexample",
    "source-hydro": "source_hydro",
    "local-eq": "local_equilibrium",
    "audits": "coupling_audits",
    "jackson": "jackson_stationarity",
    "domination-probe": "domination_probe",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zrplab", description="Disordered zero-range process experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        p.add_argument("--scenario", type=Path, help="scenario TOML (default: built-in desk-scale scenario)")
        p.add_argument("--seed", type=_u64, help="override the scenario seed")
        p.add_argument("--replicas", type=_positive, help="override the replica count")
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default: out/{name})")
        p.add_argument("--dump-scenario", type=Path, help="write the effective scenario to this file and exit")
        p.set_defaults(kind=kind)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        sc = load_scenario(args.scenario) if args.scenario else default_scenario(args.kind)
        if args.kind == "tables":
            sc.kind = "tables"
        if sc.kind != args.kind:
            raise ModelError(f"scenario kind {sc.kind!r} does not match subcommand {args.command!r}")
        sc = sc.with_overrides(seed=args.seed, replicas=args.replicas)
        if args.dump_scenario:
            dump_scenario(sc, args.dump_scenario)
            return 0
        result = run_scenario(sc)
    except (ModelError, OSError) as exc:
        log.error("%s", exc)
        return 2
    out = args.out or Path("out") / args.command
    result.write(out)
    n_fail = len(result.failed)
    n_checked = sum(v.passed is not None for v in result.verdicts)
    log.info("%s: %d/%d verdicts pass; results in %s", args.command, n_checked - n_fail, n_checked, out)
    for v in result.failed:
        log.info("FAIL %s %s estimate=%.6g target=%.6g", v.experiment, v.check, v.estimate, v.target)
    return 1 if n_fail else 0


if __name__ == "__main__":
    sys.exit(main())
