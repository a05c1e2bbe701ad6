"""Per-level runners behind the CLI subcommands and the CSV / summary writers."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from app.config import get_settings
from app.exceptions import SolverFailureError, SpaceTimeError
from app.fem.fe1d import Constraint
from app.fem.norms import ReferenceSpace, best_approx_xnorm, error_report
from app.fem.problems import make_problem
from app.fem.stability import (
    aa_norm_estimate,
    quasiopt_constants,
    spacetime_infsup,
    spatial_infsup,
    steinbach_degradation,
    temporal_infsup,
)
from app.fem.st_assembly import tensor_space
from app.fem.systems import Solution, build_system, discrete_spaces, solve
from app.schemas import ConvergenceRow, ErrorReport, InfSupRow, Method, RunConfig

logger = logging.getLogger(__name__)

Row = TypeVar("Row")

# Error columns fitted against dim_X in the convergence summary
RATE_COLUMNS = ["err_X", "err_Y", "err_0", "err_T", "err_aux_Y"]


def run_levels(fn: Callable[[int], Row], levels: Sequence[int], jobs: int = 1) -> List[Row]:
    """Apply *fn* to every level, in parallel when jobs > 1, results in level order."""
    if jobs <= 1:
        return [fn(n) for n in levels]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, levels))


def _at_level(n: int, fn: Callable[[], Row]) -> Row:
    try:
        return fn()
    except SolverFailureError as exc:
        exc.diagnostics.setdefault("level", n)
        raise
    except SpaceTimeError as exc:
        exc.detail = f"level {n}: {exc.detail}"
        raise


# ==================== CONVERGENCE ====================


def converge_level(config: RunConfig, n: int) -> ConvergenceRow:
    def run() -> ConvergenceRow:
        start = time.perf_counter()
        problem = make_problem(config.problem, config.beta)
        Xd, Yd = discrete_spaces(config.method, n)
        sol = solve(build_system(config.method, Xd, Yd, problem), config.solver)

        ref = ReferenceSpace(sol.space, config.ref_factor)
        report = error_report(problem, sol, Xd, Yd, reference=ref)
        _, best = best_approx_xnorm(problem, sol.space, reference=ref)
        ratio = report.err_X / best if best > 0.0 else 1.0

        bound = None
        if config.method == Method.NEW_MIXED:
            gamma = spacetime_infsup(Xd, Yd, "factorized").gamma
            bound = quasiopt_constants(gamma, aa_norm_estimate(Yd, config.beta)).C

        row = ConvergenceRow(
            N=n,
            dim_X=report.dim_X,
            err_X=report.err_X,
            err_Y=report.err_Y,
            err_0=report.err_0,
            err_T=report.err_T,
            err_aux_Y=report.err_aux_Y,
            quasiopt_ratio=ratio,
            quasiopt_bound=bound,
            wall_time=time.perf_counter() - start,
        )
        logger.info("converge N=%d: dim_X=%d err_X=%.4e ratio=%.3f", n, row.dim_X, row.err_X, ratio)
        return row

    return _at_level(n, run)


def rate_fits(table: pd.DataFrame, columns: Sequence[str] = RATE_COLUMNS) -> Dict[str, float]:
    """Least-squares slopes of log(err) against log(dim_X)."""
    rates = {}
    for col in columns:
        if col not in table:
            continue
        values = pd.to_numeric(table[col], errors="coerce")
        mask = values.notna() & (values > 0.0)
        if mask.sum() < 2:
            continue
        slope, _ = np.polyfit(np.log(table.loc[mask, "dim_X"].astype(float)), np.log(values[mask]), 1)
        rates[col] = float(slope)
    return rates


def local_rates(table: pd.DataFrame, column: str = "err_X") -> List[float]:
    """Slopes of log(err) against log(dim_X) between consecutive levels."""
    values = pd.to_numeric(table[column], errors="coerce")
    mask = values.notna() & (values > 0.0)
    dims = np.log(table.loc[mask, "dim_X"].astype(float).to_numpy())
    errs = np.log(values[mask].to_numpy(dtype=float))
    return (np.diff(errs) / np.diff(dims)).tolist()


def converge(config: RunConfig) -> pd.DataFrame:
    rows = run_levels(lambda n: converge_level(config, n), config.levels, config.jobs)
    return pd.DataFrame([r.model_dump() for r in rows], columns=list(ConvergenceRow.model_fields))


# ==================== INF-SUP ====================


def infsup_level(config: RunConfig, n: int) -> InfSupRow:
    def run() -> InfSupRow:
        settings = get_settings()
        Xd, Yd = discrete_spaces(config.method, n)
        spatial = spatial_infsup(Xd.spatial).gamma
        temporal = temporal_infsup(Xd.temporal, Yd.temporal).gamma
        factorized = temporal * spatial
        full = None
        if n <= settings.FULL_INFSUP_MAX_N:
            full = spacetime_infsup(Xd, Yd, "full", config.ref_factor).gamma

        gamma_full = zig = None
        if config.method == Method.STEINBACH:
            X0 = tensor_space(
                n,
                settings.STEINBACH_SPATIAL_ELEMENTS,
                T=settings.STEINBACH_HORIZON,
                constraint=Constraint.ZERO_LEFT,
            )
            degradation = steinbach_degradation(X0)
            gamma_full, zig = degradation.gamma_full, degradation.zigzag_value

        aa = aa_norm_estimate(Yd, config.beta)
        row = InfSupRow(
            N=n,
            spatial_gamma=spatial,
            temporal_gamma=temporal,
            factorized_gamma=factorized,
            full_gamma=full,
            steinbach_gamma_full=gamma_full,
            zigzag_value=zig,
            aa_norm=aa,
            C_delta=quasiopt_constants(factorized, aa).C if config.method == Method.NEW_MIXED else None,
        )
        logger.info("infsup N=%d: factorized=%.6f full=%s", n, factorized, full)
        return row

    return _at_level(n, run)


def infsup(config: RunConfig) -> pd.DataFrame:
    rows = run_levels(lambda n: infsup_level(config, n), config.levels, config.jobs)
    return pd.DataFrame([r.model_dump() for r in rows], columns=list(InfSupRow.model_fields))


# ==================== SINGLE SOLVE ====================


def solve_level(config: RunConfig, n: int) -> Tuple[Solution, ErrorReport]:
    def run() -> Tuple[Solution, ErrorReport]:
        problem = make_problem(config.problem, config.beta)
        Xd, Yd = discrete_spaces(config.method, n)
        sol = solve(build_system(config.method, Xd, Yd, problem), config.solver)
        return sol, error_report(problem, sol, Xd, Yd, config.ref_factor)

    return _at_level(n, run)


def coefficient_table(sol: Solution) -> pd.DataFrame:
    """One row per coefficient: block, flat index, temporal and spatial index, value."""
    frames = []
    for block, space, coeffs in (("u", sol.space, sol.u_coeffs), ("aux", sol.aux_space, sol.aux_coeffs)):
        if coeffs is None:
            continue
        k = np.arange(space.dim)
        kt, kx = space.unravel(k)
        frames.append(pd.DataFrame({"block": block, "index": k, "k_t": kt, "k_x": kx, "value": coeffs}))
    return pd.concat(frames, ignore_index=True)


# ==================== OUTPUT ====================


def write_table(table: pd.DataFrame, out: str) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(
        path,
        index=False,
        float_format=f"%.{get_settings().CSV_DIGITS}g",
        na_rep="",
        encoding="utf-8",
        lineterminator="\n",
    )
    return path


def summary_path(out: str) -> Path:
    path = Path(out)
    return path.with_name(f"{path.stem}.summary.txt")


def write_summary(lines: Sequence[str], out: str) -> Path:
    path = summary_path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def converge_summary(config: RunConfig, table: pd.DataFrame, rates: Optional[Dict[str, float]] = None) -> List[str]:
    rates = rate_fits(table) if rates is None else rates
    lines = [
        f"method={config.method.value} problem={config.problem.value} beta={config.beta:g} "
        f"solver={config.solver.value} ref_factor={config.ref_factor}",
        f"levels={','.join(str(n) for n in config.levels)}",
    ]
    lines += [f"rate {col} vs dim_X: {rate:.4f}" for col, rate in rates.items()]
    if "err_X" in rates:
        lines.append("local rates err_X: " + ", ".join(f"{r:.4f}" for r in local_rates(table)))
    lines.append(f"max quasiopt_ratio: {table['quasiopt_ratio'].max():.4f}")
    return lines


def report_summary(config: RunConfig, n: int, report: ErrorReport, sol: Solution) -> List[str]:
    lines = [f"method={config.method.value} problem={config.problem.value} beta={config.beta:g} N={n}"]
    lines += [f"{key}={value}" for key, value in report.model_dump().items()]
    lines += [f"{key}={value}" for key, value in sol.diagnostics.model_dump().items()]
    return lines
