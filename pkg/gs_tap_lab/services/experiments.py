"""
Experiment Service for GS-TAP Lab
Disorder-averaged TAP residuals, overlap concentration and N-scaling fits
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from ..config import (
    DEFAULT_DISORDER_EXACT,
    DEFAULT_DISORDER_MCMC,
    DEFAULT_QUADRATURE_ORDER,
    ENUMERATION_CAP,
    MIN_SCALING_POINTS,
    MODES,
    SITE_POLICIES,
    SCALING_TARGETS,
)
from ..errors import ConvergenceError, ExperimentError
from ..models import (
    ConcentrationReport,
    DisorderSample,
    GibbsStats,
    McmcSettings,
    ModelParams,
    OrderParams,
    ScalingReport,
    TapResidualReport,
)
from ..quadrature import cached_rule
from ..single_site import single_site_moments
from ..utils import derive_seed, mean_and_std_error
from .fixedpoint import solve
from .gibbs import enumerate_states, generate_disorder, mcmc_run

logger = logging.getLogger(__name__)


# =============================================================================
# TAP RIGHT-HAND SIDES
# =============================================================================

def tap_rhs(local_field, delta, params: ModelParams):
    """
    TAP right-hand sides for a cavity field xi and shifted crystal field Delta.

    m_rhs = sum_g g 2sh[g(beta xi + h)] e^{g^2 Delta} / (1 + sum_g 2ch[g(beta xi + h)] e^{g^2 Delta})
    p_rhs = the g^2 analogue

    Accepts scalars or arrays of fields.

    Returns:
        (m_rhs, p_rhs); |m_rhs| <= S and m_rhs^2 <= p_rhs <= S^2
    """
    field = params.beta * np.asarray(local_field, dtype=np.float64) + params.h
    m_rhs, p_rhs = single_site_moments(field, delta, params.S)
    if np.ndim(m_rhs) == 0:
        return float(m_rhs), float(p_rhs)
    return m_rhs, p_rhs


def cavity_field(
    disorder: DisorderSample,
    stats: GibbsStats,
    params: ModelParams,
    op: OrderParams,
    site: int,
) -> Tuple[float, float]:
    """
    Cavity field and shifted crystal field at one site.

    xi = (1/sqrt(N)) sum_{i != site} g_{i,site} <s_i> - beta (p - q) <s_site>
    Delta = D + beta^2 (p - q) / 2

    Args:
        disorder: Coupling sample
        stats: Gibbs averages on that sample
        params: Model parameters
        op: Solved order parameters
        site: Site index, 0..n-1

    Returns:
        (xi, Delta)
    """
    if not 0 <= site < disorder.n:
        raise IndexError(f"site {site} out of range for n={disorder.n}")
    xi = _cavity_fields(disorder, stats, params, op)[site]
    return float(xi), _delta(params, op)


def _cavity_fields(disorder: DisorderSample, stats: GibbsStats, params: ModelParams, op: OrderParams) -> np.ndarray:
    m = stats.magnetizations
    return disorder.matrix @ m / math.sqrt(disorder.n) - params.beta * (op.p - op.q) * m


def _delta(params: ModelParams, op: OrderParams) -> float:
    return params.D + 0.5 * params.beta ** 2 * (op.p - op.q)


def physicist_tap_rhs(disorder: DisorderSample, stats: GibbsStats, params: ModelParams):
    """
    Right-hand sides of the coupled physicists' TAP system at every site.

    With spread_i = sum_{j != i} g_ij^2 (p_j - m_j^2), the exponents are
    beta xi_i = (beta/sqrt(N)) sum_j g_ij m_j - (beta^2/N) m_i spread_i and
    -beta Delta_i = D + (beta^2/2N) spread_i, evaluated in the exp(H)
    convention. Only S = 1, h = 0.

    Returns:
        (m_rhs, p_rhs) arrays of length n
    """
    if params.S != 1 or params.h != 0:
        raise ExperimentError("the physicists' TAP system is defined only for S=1 and h=0")
    n = disorder.n
    couplings = disorder.matrix
    m = stats.magnetizations
    spread = (couplings ** 2) @ (stats.second_moments - m ** 2)
    field = params.beta / math.sqrt(n) * (couplings @ m) - params.beta ** 2 / n * m * spread
    crystal = params.D + params.beta ** 2 / (2.0 * n) * spread
    return single_site_moments(field, crystal, params.S)


# =============================================================================
# PER-DISORDER TASKS
# =============================================================================

def _gibbs_stats(
    disorder: DisorderSample,
    params: ModelParams,
    mode: str,
    mcmc: McmcSettings,
    cap: int,
    order_params: Optional[OrderParams] = None,
) -> GibbsStats:
    if mode == "exact":
        return enumerate_states(disorder, params, cap=cap)
    return mcmc_run(
        disorder, params,
        sweeps=mcmc.sweeps, burn_in=mcmc.burn_in, replicas=mcmc.replicas,
        rng_seed=disorder.seed, order_params=order_params,
    )


def _tap_task(job: Tuple) -> Dict[str, float]:
    params, n, seed, mode, mcmc, cap, op, physics = job
    disorder = generate_disorder(n, seed)
    stats = _gibbs_stats(disorder, params, mode, mcmc, cap)
    if physics:
        m_rhs, p_rhs = physicist_tap_rhs(disorder, stats, params)
    else:
        m_rhs, p_rhs = tap_rhs(_cavity_fields(disorder, stats, params, op), _delta(params, op), params)
    m_sq = (stats.magnetizations - m_rhs) ** 2
    p_sq = (stats.second_moments - p_rhs) ** 2
    return {
        "seed": seed,
        "m_residual": float(np.mean(m_sq)),
        "p_residual": float(np.mean(p_sq)),
        "site_n_m_residual": float(m_sq[-1]),
        "site_n_p_residual": float(p_sq[-1]),
    }


def _concentration_task(job: Tuple) -> Dict[str, float]:
    params, n, seed, mode, mcmc, cap, op = job
    disorder = generate_disorder(n, seed)
    stats = _gibbs_stats(disorder, params, mode, mcmc, cap, order_params=op)
    moments = stats.exact_overlap_moments(op.p, op.q) if mode == "exact" else stats.overlap_moments
    return {"seed": seed, "r12_sq": moments.r12_sq, "r11_sq": moments.r11_sq}


def _map_disorder(task: Callable, jobs: List[Tuple], workers: int) -> List[Dict[str, float]]:
    """Evaluate jobs in order; worker processes when workers > 1"""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, jobs))
    return [task(job) for job in jobs]


# =============================================================================
# EXPERIMENTS
# =============================================================================

def _check_mode(mode: str):
    if mode not in MODES:
        raise ExperimentError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")


def _resolve_disorder_count(n_disorder: Optional[int], mode: str) -> int:
    if n_disorder is None:
        return DEFAULT_DISORDER_EXACT if mode == "exact" else DEFAULT_DISORDER_MCMC
    if n_disorder < 1:
        raise ExperimentError(f"n_disorder must be >= 1, got {n_disorder}")
    return int(n_disorder)


def solved_order_params(params: ModelParams, quadrature_order: int = DEFAULT_QUADRATURE_ORDER) -> OrderParams:
    """Infinite-N (p, q) for params; raises ConvergenceError if the solve fails"""
    report = solve(params, cached_rule(quadrature_order))
    if not report.converged:
        raise ConvergenceError(
            f"fixed point did not converge in {report.iterations} iterations "
            f"(last step {report.final_step_norm:.3g})"
        )
    return report.solution


def _disorder_seeds(master_seed: int, count: int) -> List[int]:
    return [derive_seed(master_seed, i) for i in range(count)]


def _tap_experiment(
    params: ModelParams,
    n: int,
    n_disorder: Optional[int],
    mode: str,
    site_policy: str,
    physics: bool,
    mcmc: Optional[McmcSettings],
    master_seed: int,
    workers: int,
    order_params: Optional[OrderParams],
    quadrature_order: int,
    cap: int,
) -> TapResidualReport:
    _check_mode(mode)
    if site_policy not in SITE_POLICIES:
        raise ExperimentError(f"site_policy must be one of {', '.join(SITE_POLICIES)}, got {site_policy!r}")
    count = _resolve_disorder_count(n_disorder, mode)
    op = order_params if order_params is not None else solved_order_params(params, quadrature_order)
    mcmc = mcmc or McmcSettings()
    if mode == "mcmc":
        mcmc.validate()
    jobs = [(params, n, seed, mode, mcmc, cap, op, physics) for seed in _disorder_seeds(master_seed, count)]
    rows = _map_disorder(_tap_task, jobs, workers)

    summary = {key: mean_and_std_error([row[key] for row in rows])
               for key in ("m_residual", "p_residual", "site_n_m_residual", "site_n_p_residual")}
    prefix = "site_n_" if site_policy == "site_N" else ""
    experiment = "tap-physics" if physics else "tap"
    report = TapResidualReport(
        experiment=experiment,
        n=n,
        params=params,
        order_params=op,
        n_disorder=count,
        mean_sq_m_residual=summary[prefix + "m_residual"][0],
        mean_sq_p_residual=summary[prefix + "p_residual"][0],
        site_policy=site_policy,
        mode=mode,
        std_errors={
            "m_residual": summary[prefix + "m_residual"][1],
            "p_residual": summary[prefix + "p_residual"][1],
            "site_n_m_residual": summary["site_n_m_residual"][1],
            "site_n_p_residual": summary["site_n_p_residual"][1],
        },
        site_n_m_residual=summary["site_n_m_residual"][0],
        site_n_p_residual=summary["site_n_p_residual"][0],
        per_disorder=rows,
    )
    logger.info(
        f"{experiment} N={n} mode={mode}: m-residual {report.mean_sq_m_residual:.6g}, "
        f"p-residual {report.mean_sq_p_residual:.6g} over {count} samples"
    )
    return report


def tap_residual_experiment(
    params: ModelParams,
    n: int,
    n_disorder: Optional[int] = None,
    mode: str = "exact",
    site_policy: str = "site_averaged",
    mcmc: Optional[McmcSettings] = None,
    master_seed: int = 0,
    workers: int = 1,
    order_params: Optional[OrderParams] = None,
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    cap: int = ENUMERATION_CAP,
) -> TapResidualReport:
    """
    Disorder-averaged squared TAP residuals.

    For each seeded sample the Gibbs averages are compared with tap_rhs at
    the sample's cavity fields, using the solved infinite-N (p, q). Both the
    site-averaged and the site-N values are computed; `site_policy` picks
    the headline one.

    Args:
        params: Model parameters
        n: System size
        n_disorder: Disorder samples (200 exact / 50 mcmc by default)
        mode: exact or mcmc
        site_policy: site_averaged or site_N
        mcmc: Chain settings for mcmc mode
        master_seed: Seed fanned out to per-sample seeds
        workers: Worker processes
        order_params: Pre-solved (p, q); solved here when omitted
        quadrature_order: Rule order for the solve
        cap: Enumeration cap

    Returns:
        TapResidualReport
    """
    return _tap_experiment(
        params, n, n_disorder, mode, site_policy, False, mcmc,
        master_seed, workers, order_params, quadrature_order, cap,
    )


def physicist_tap_residual(
    params: ModelParams,
    n: int,
    n_disorder: Optional[int] = None,
    mode: str = "exact",
    mcmc: Optional[McmcSettings] = None,
    master_seed: int = 0,
    workers: int = 1,
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    cap: int = ENUMERATION_CAP,
) -> TapResidualReport:
    """
    Site-averaged squared residuals of the coupled physicists' TAP system.

    Raises:
        ExperimentError: unless S = 1 and h = 0
    """
    if params.S != 1 or params.h != 0:
        raise ExperimentError("the physicists' TAP system is defined only for S=1 and h=0")
    return _tap_experiment(
        params, n, n_disorder, mode, "site_averaged", True, mcmc,
        master_seed, workers, None, quadrature_order, cap,
    )


def concentration_experiment(
    params: ModelParams,
    n: int,
    n_disorder: Optional[int] = None,
    mode: str = "exact",
    mcmc: Optional[McmcSettings] = None,
    master_seed: int = 0,
    workers: int = 1,
    order_params: Optional[OrderParams] = None,
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    cap: int = ENUMERATION_CAP,
) -> ConcentrationReport:
    """
    Disorder-averaged <(R12 - q)^2> and <(R11 - p)^2>.

    Exact mode uses the enumerated pair/square correlations; mcmc mode uses
    replica pairs of the same chain run.

    Returns:
        ConcentrationReport with the 16 S^2 / N and 16 S^4 / N bounds
    """
    _check_mode(mode)
    count = _resolve_disorder_count(n_disorder, mode)
    op = order_params if order_params is not None else solved_order_params(params, quadrature_order)
    mcmc = mcmc or McmcSettings()
    if mode == "mcmc":
        mcmc.validate(overlaps=True)
    jobs = [(params, n, seed, mode, mcmc, cap, op) for seed in _disorder_seeds(master_seed, count)]
    rows = _map_disorder(_concentration_task, jobs, workers)

    r12, r12_se = mean_and_std_error([row["r12_sq"] for row in rows])
    r11, r11_se = mean_and_std_error([row["r11_sq"] for row in rows])
    report = ConcentrationReport(
        n=n,
        params=params,
        order_params=op,
        n_disorder=count,
        est_r12_sq=r12,
        est_r11_sq=r11,
        mode=mode,
        std_errors={"r12_sq": r12_se, "r11_sq": r11_se},
        per_disorder=rows,
    )
    logger.info(
        f"concentration N={n} mode={mode}: r12 {r12:.6g} (bound {report.bound_r12:.6g}), "
        f"r11 {r11:.6g} (bound {report.bound_r11:.6g})"
    )
    return report


# =============================================================================
# SCALING
# =============================================================================

def fit_power_law(n_grid: Sequence[int], values: Sequence[float]) -> Tuple[float, float, float]:
    """
    Least-squares fit of log(value) = intercept + slope * log(N).

    Args:
        n_grid: Strictly increasing sizes, at least 3
        values: Positive values, one per size

    Returns:
        (slope, intercept, slope standard error)
    """
    _check_grid(n_grid)
    if len(values) != len(n_grid):
        raise ExperimentError(f"{len(values)} values for a grid of {len(n_grid)} sizes")
    data = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(data)) or np.any(data <= 0):
        raise ExperimentError(f"log-log fit needs positive finite values, got {data.tolist()}")
    fit = linregress(np.log(np.asarray(n_grid, dtype=np.float64)), np.log(data))
    return float(fit.slope), float(fit.intercept), float(fit.stderr)


def _check_grid(n_grid: Sequence[int]):
    if len(n_grid) < MIN_SCALING_POINTS:
        raise ExperimentError(f"grid needs at least {MIN_SCALING_POINTS} sizes, got {len(n_grid)}")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ExperimentError(f"grid must be strictly increasing, got {list(n_grid)}")


def scaling_study(
    params: ModelParams,
    n_grid: Sequence[int],
    n_disorder: Optional[int] = None,
    which: str = "tap_m",
    mode: str = "exact",
    mcmc: Optional[McmcSettings] = None,
    master_seed: int = 0,
    workers: int = 1,
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    cap: int = ENUMERATION_CAP,
) -> ScalingReport:
    """
    Run one experiment across a grid of sizes and fit its power law in N.

    Args:
        params: Model parameters
        n_grid: Strictly increasing sizes (>= 3)
        n_disorder: Disorder samples per size
        which: tap_m, tap_p, conc_r12 or conc_r11
        mode: exact or mcmc

    Returns:
        ScalingReport with per-size reports
    """
    if which not in SCALING_TARGETS:
        raise ExperimentError(f"which must be one of {', '.join(SCALING_TARGETS)}, got {which!r}")
    _check_grid(n_grid)
    op = solved_order_params(params, quadrature_order)
    reports = []
    residuals = []
    std_errors = []
    for n in n_grid:
        common = dict(
            n_disorder=n_disorder, mode=mode, mcmc=mcmc, master_seed=master_seed,
            workers=workers, order_params=op, quadrature_order=quadrature_order, cap=cap,
        )
        if which.startswith("tap"):
            report = tap_residual_experiment(params, n, **common)
            key = "m_residual" if which == "tap_m" else "p_residual"
            value = report.mean_sq_m_residual if which == "tap_m" else report.mean_sq_p_residual
        else:
            report = concentration_experiment(params, n, **common)
            key = "r12_sq" if which == "conc_r12" else "r11_sq"
            value = report.est_r12_sq if which == "conc_r12" else report.est_r11_sq
        reports.append(report)
        residuals.append(value)
        std_errors.append(report.std_errors[key])

    slope, intercept, slope_se = fit_power_law(n_grid, residuals)
    logger.info(f"scaling {which}: slope {slope:.4f} +- {slope_se:.4f} over N={list(n_grid)}")
    return ScalingReport(
        which=which,
        n_grid=list(n_grid),
        residuals=residuals,
        std_errors=std_errors,
        fitted_slope=slope,
        fitted_intercept=intercept,
        slope_std_error=slope_se,
        reports=reports,
    )


# =============================================================================
# CONCENTRATION THRESHOLDS
# =============================================================================

def _threshold(factor: float) -> float:
    """Root t of factor * t^2 exp(24 t^2) = 15/16, where t = beta S^2"""
    def condition(t: float) -> float:
        return factor * t * t * math.exp(24.0 * t * t) - 15.0 / 16.0

    # condition(1) > 0 for every factor used below
    return brentq(condition, 0.0, 1.0, xtol=1e-15)


def concentration_thresholds(S: int, n: int) -> Tuple[float, float, float]:
    """
    Thresholds under which the overlap concentration argument closes.

    beta_0: 12 beta^2 S^4 (2 + 1/N) exp(24 beta^2 S^4) <= 15/16
    beta_1: 4 beta^2 S^4 (5 + 3/N) exp(24 beta^2 S^4) <= 15/16

    Returns:
        (beta_0, beta_1, min of the two)
    """
    if S < 1 or n < 1:
        raise ExperimentError(f"S and n must be >= 1, got S={S}, n={n}")
    scale = float(S) ** 2
    beta_0 = _threshold(12.0 * (2.0 + 1.0 / n)) / scale
    beta_1 = _threshold(4.0 * (5.0 + 3.0 / n)) / scale
    return beta_0, beta_1, min(beta_0, beta_1)
