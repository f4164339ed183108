"""``liftlab`` command line interface."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from ..bounds import NonConvergence, TheoremViolation
from ..samplers import PROCESSES, StationarityError, ThinningError
from ..spectral import CrossingError, GalerkinError
from .config import REPRODUCE_TARGETS, ConfigError, check_values, validate_config
from .commands import HANDLERS, with_defaults
from .report import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_VIOLATION
from .reproduce import reproduce

__all__ = ["main", "build_parser"]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _gamma(text: str):
    return text if text == "auto" else float(text)


def _add_potential(p: argparse.ArgumentParser) -> None:
    p.add_argument("--potential", choices=("quadratic", "double_well"))
    p.add_argument("--m", type=float, help="stiffness of the quadratic potential")
    p.add_argument("--beta", type=float, help="double-well height")
    p.add_argument("--d", type=int, help="dimension of the quadratic potential")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file (report .json or data .csv) or directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS thread limit (default: $LIFTLAB_THREADS)")

    parser = argparse.ArgumentParser(prog="liftlab", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a process and write trajectories as CSV")
    p.add_argument("--process", choices=PROCESSES)
    _add_potential(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--chains", type=int)
    p.add_argument("--step", type=float)

    p = sub.add_parser("liftcheck", parents=[common], help="Monte Carlo check of the lift identities")
    p.add_argument("--process", choices=("hamiltonian", "langevin", "rhmc", "bps"))
    _add_potential(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--k", type=float, help="pass threshold in standard errors")

    p = sub.add_parser("spectral", parents=[common], help="Galerkin decay curve, gaps and relaxation times")
    p.add_argument("--process", choices=("overdamped", "hamiltonian", "langevin", "rhmc"))
    _add_potential(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--grid", help="time grid start:stop:step")
    p.add_argument("--eps", type=_float_list, help="comma-separated levels")
    p.add_argument("--sweep-gamma", dest="sweep_gamma", help="gap sweep start:stop:step over gamma")

    p = sub.add_parser("circle", parents=[common], help="TV mixing times of the circle walk and its lift")
    p.add_argument("--n", type=_int_list)
    p.add_argument("--eps-rule", dest="eps_rule")

    p = sub.add_parser("bounds", parents=[common], help="hypocoercivity constants and certificates")
    _add_potential(p)
    p.add_argument("--kappa-minus", dest="kappa_minus", type=float)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--T", type=float)
    group.add_argument("--auto-T", dest="auto_T", action="store_true", default=None)
    p.add_argument("--gamma", type=_gamma)
    p.add_argument("--eps", type=float)
    p.add_argument("--measure", action="store_true", default=None,
                   help="compare with the Galerkin RHMC relaxation time of --potential")

    p = sub.add_parser("reproduce", parents=[common], help="run a canonical experiment")
    p.add_argument("target", choices=REPRODUCE_TARGETS)

    p = sub.add_parser("validate", parents=[common], help="check a config file and echo it")
    p.add_argument("config")

    p = sub.add_parser("run", parents=[common], help="run the experiment described by a config file")
    p.add_argument("config")
    return parser


def _threads(args) -> int | None:
    n = getattr(args, "threads", None)
    if n is None and os.environ.get("LIFTLAB_THREADS"):
        n = int(os.environ["LIFTLAB_THREADS"])
    if n is not None and n < 1:
        raise ConfigError([f"threads = {n} violates threads >= 1"])
    return n


def dispatch(values: dict) -> int:
    command = values["command"]
    settings = {k: v for k, v in values.items() if k != "command"}
    start = time.perf_counter()
    if command == "reproduce":
        report = reproduce(settings)
    else:
        report = HANDLERS[command](with_defaults(command, settings))
    elapsed = time.perf_counter() - start
    reports = [f for f in report.files if f.endswith(".json")]
    if reports:
        # timings live beside the report so that reports stay byte-identical
        side = Path(reports[0]).with_suffix(".timings.json")
        side.write_text(json.dumps({"wall_clock_seconds": elapsed}) + "\n")
    summary = report.to_dict()
    print(json.dumps({k: summary[k] for k in ("verdicts", "files", "exit_code")}, sort_keys=True))
    return report.exit_code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = _threads(args)
        if args.command == "validate":
            cfg = validate_config(args.config)
            print(json.dumps(cfg.echo(), indent=2, sort_keys=True))
            return 0
        if args.command == "run":
            cfg = validate_config(args.config)
            values = cfg.echo()
            for key in ("seed", "out"):
                if hasattr(args, key):
                    values[key] = getattr(args, key)
        else:
            values = {k: v for k, v in vars(args).items() if v is not None and k != "threads"}
            errs = check_values(values["command"], {k: v for k, v in values.items() if k != "command"})
            if errs:
                raise ConfigError(errs)
        with threadpool_limits(limits=threads):
            return dispatch(values)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except TheoremViolation as exc:
        print(f"theorem violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (NonConvergence, GalerkinError, CrossingError, StationarityError, ThinningError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
