import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from .config import get_settings, use_config_file
from .exceptions import InvalidArgumentError, SpaceTimeError
from .schemas import Method, ProblemKind, RunConfig, SolverKind
from . import studies

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file (default: spacetime.env if present)")
    parser.add_argument("--method", choices=[m.value for m in Method])
    parser.add_argument("--problem", choices=[p.value for p in ProblemKind])
    parser.add_argument("--beta", type=float, help="convection coefficient (>= 0)")
    parser.add_argument("--levels", help="comma-separated temporal element counts, e.g. 8,16,32")
    parser.add_argument("--ref-factor", dest="ref_factor", type=int)
    parser.add_argument("--solver", choices=[s.value for s in SolverKind])
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--jobs", type=int, help="levels computed in parallel")
    parser.add_argument("--log-level", dest="log_level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spacetime",
        description="Space-time Galerkin discretizations of the 1D heat / convection-diffusion equation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    converge = sub.add_parser("converge", help="convergence study over the levels")
    _add_run_flags(converge)

    infsup = sub.add_parser("infsup", help="inf-sup and quasi-optimality constants per level")
    _add_run_flags(infsup)

    solve = sub.add_parser("solve", help="single solve with coefficient dump and error report")
    _add_run_flags(solve)
    solve.add_argument("--level", type=int, help="temporal element count N (default: first level)")
    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    """Settings-file defaults overridden by the flags that were given."""
    settings = get_settings()
    values = {
        "method": settings.METHOD,
        "problem": settings.PROBLEM,
        "beta": settings.BETA,
        "levels": settings.LEVELS,
        "ref_factor": settings.REF_FACTOR,
        "solver": settings.SOLVER,
        "out": settings.OUT,
        "jobs": settings.JOBS,
    }
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_converge(config: RunConfig) -> List[str]:
    table = studies.converge(config)
    studies.write_table(table, config.out)
    lines = studies.converge_summary(config, table)
    studies.write_summary(lines, config.out)
    return lines


def cmd_infsup(config: RunConfig) -> List[str]:
    table = studies.infsup(config)
    studies.write_table(table, config.out)
    lines = [f"method={config.method.value} beta={config.beta:g} ref_factor={config.ref_factor}"]
    lines += [table.to_string(index=False)]
    studies.write_summary(lines, config.out)
    return lines


def cmd_solve(config: RunConfig, level: Optional[int] = None) -> List[str]:
    n = config.levels[0] if level is None else level
    if n < 2:
        raise InvalidArgumentError(f"level must be >= 2, got {n}.")
    sol, report = studies.solve_level(config, n)
    studies.write_table(studies.coefficient_table(sol), config.out)
    lines = studies.report_summary(config, n, report, sol)
    studies.write_summary(lines, config.out)
    return lines


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = use_config_file(args.config)
    except SpaceTimeError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code

    logging.basicConfig(level=(args.log_level or settings.LOG_LEVEL).upper(), format=LOG_FORMAT, force=True)

    try:
        config = run_config(args)
    except ValidationError as exc:
        logger.error("invalid configuration: %s", exc)
        return InvalidArgumentError.exit_code

    try:
        if args.command == "converge":
            lines = cmd_converge(config)
        elif args.command == "infsup":
            lines = cmd_infsup(config)
        else:
            lines = cmd_solve(config, args.level)
    except SpaceTimeError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return exc.exit_code

    print("\n".join(lines))
    return 0


if __name__ == "__main__":
    sys.exit(main())
