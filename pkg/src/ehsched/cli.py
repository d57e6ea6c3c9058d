"""Command-line entry point.

Rates are reported in bits over a unit bandwidth (bits/Hz times the slot
length).  Exit status: 0 success, 2 unreadable or malformed input, 3 solver
failure (or too many failed trials in a sweep).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .gbd import write_trace
from .harness import POLICIES, ExperimentAborted, ExperimentSpec, run_experiment, run_policy
from .instance import (
    ConfigError,
    InstanceFormatError,
    ScenarioConfig,
    dump_instance,
    load_instance,
    parse_json_text,
    sample_instance,
)
from .master import CutVerificationError
from .policies import ORACLE_LIMIT
from .primal import DEFAULT_TOL, SolverError

EXIT_OK, EXIT_PARSE, EXIT_SOLVER = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ehsched",
        description="Slot allocation and power control for energy-harvesting transmitters. "
        "Rates are in bits over a unit bandwidth; energies in files are joules.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="draw a random instance from a scenario file (mJ/dBm units)")
    g.add_argument("config", nargs="?", help="scenario file; the two-user default if omitted")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="instance file to write (stdout if omitted)")

    s = sub.add_parser("solve", help="run one policy on an instance file")
    s.add_argument("instance")
    s.add_argument("--policy", default="gbd-srm", choices=sorted(POLICIES))
    s.add_argument("--zeta", type=float)
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--max-iter", type=int, help="GBD iteration cap (default: number of schedules)")
    s.add_argument("--trace", help="write the GBD bound trace (iter,lower,upper,gap) here")
    s.add_argument("--out", help="write the result as JSON here (stdout if omitted)")

    w = sub.add_parser("sweep", help="run an experiment spec and write a results table")
    w.add_argument("spec")
    w.add_argument("--seed", type=int, help="override base_seed")
    w.add_argument("--trials", type=int, help="override the trial count")
    w.add_argument("--zeta", type=float)
    w.add_argument("--tol", type=float)
    w.add_argument("--out")
    w.add_argument("--format", choices=("csv", "json-lines"), default="csv")

    c = sub.add_parser("compare", help="run every applicable policy on one instance")
    c.add_argument("instance")
    c.add_argument("--objective", choices=("srm", "mrm"), default="srm")
    c.add_argument("--zeta", type=float)
    c.add_argument("--tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--out")
    c.add_argument("--format", choices=("csv", "json-lines"), default="csv")
    return p


def _write(text: str, dest: str | None) -> None:
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_gen(args) -> int:
    config = ScenarioConfig()
    if args.config:
        config = ScenarioConfig.from_dict(parse_json_text(Path(args.config).read_text(), "scenario"))
    inst = sample_instance(config, args.seed)
    if args.out:
        dump_instance(inst, args.out)
    else:
        dump_instance(inst, sys.stdout)
    return EXIT_OK


def _cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    res = run_policy(args.policy, inst, args.zeta, args.tol, args.max_iter)
    if args.trace and res.trace is not None:
        with open(args.trace, "w") as fp:
            write_trace(res.trace, fp)
    _write(json.dumps(res.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = ExperimentSpec.loads(Path(args.spec).read_text())
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.zeta is not None:
        changes["zeta"] = args.zeta
    if args.tol is not None:
        changes["tol"] = args.tol
    if changes:
        spec = spec.replace(**changes)
    table = run_experiment(spec)
    buf = io.StringIO()
    table.write(buf, args.format)
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def _cmd_compare(args) -> int:
    inst = load_instance(args.instance)
    names = [f"gbd-{args.objective}"]
    if inst.K**inst.M <= ORACLE_LIMIT:
        names.append(f"oracle-{args.objective}")
    names += [f"suboptimal-{args.objective}", f"myopic-zhang-{args.objective}", f"myopic-fullduplex-{args.objective}"]
    rows = []
    for name in names:
        res = run_policy(name, inst, args.zeta, args.tol)
        rows.append(
            {
                "policy": name,
                "value": res.value,
                "sum_rate": res.report.sum_rate,
                "min_rate": res.report.min_rate,
                "fairness": res.report.fairness,
                "rates": ";".join(repr(r) for r in res.report.per_user_rate),
                "iterations": res.iterations,
            }
        )
    buf = io.StringIO()
    if args.format == "csv":
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    else:
        for r in rows:
            buf.write(json.dumps(r) + "\n")
    _write(buf.getvalue(), args.out)
    return EXIT_OK


COMMANDS = {"gen": _cmd_gen, "solve": _cmd_solve, "sweep": _cmd_sweep, "compare": _cmd_compare}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InstanceFormatError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ExperimentAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.failures:
            print(f"  {line}", file=sys.stderr)
        return EXIT_SOLVER
    except (SolverError, CutVerificationError) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
