"""
Reporting Service for GS-TAP Lab
Turns results into CSV rows and JSON documents with a configuration header
"""
import csv
import io
import json
import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..config import CSV_COLUMNS, TOOL_NAME, TOOL_VERSION
from ..models import (
    ConcentrationReport,
    GibbsStats,
    ModelParams,
    ScalingReport,
    SolveReport,
    TapResidualReport,
)
from ..utils import atomic_write_text, format_float

logger = logging.getLogger(__name__)

SITE_COLUMNS = [
    "site", "magnetization", "second_moment",
    "magnetization_std_error", "second_moment_std_error",
]
SOLVE_COLUMNS = [
    "S", "beta", "D", "h", "p", "q", "iterations", "final_step_norm",
    "residual_norm", "contraction_certificate", "converged", "within_hypothesis",
    "quadrature_order", "refinement_gap", "quadrature_certified",
]
CERTIFICATE_COLUMNS = ["S", "beta", "certificate", "beta_tilde", "within_contraction"]

# Fields that change where or how a run is scheduled, never its numbers
_HEADER_EXCLUDED = ("workers", "output_path")


# =============================================================================
# ROW BUILDERS
# =============================================================================

def _base_row(experiment: str, n: int, params: ModelParams, p: float, q: float, mode: str) -> Dict[str, Any]:
    return {
        "experiment": experiment,
        "N": n,
        "S": params.S,
        "beta": params.beta,
        "D": params.D,
        "h": params.h,
        "p": p,
        "q": q,
        "mode": mode,
    }


def tap_rows(report: TapResidualReport) -> List[Dict[str, Any]]:
    """Per-disorder rows, then one aggregate row, for each of the m and p residuals"""
    stem = "tapphys" if report.experiment == "tap-physics" else "tap"
    site_n = report.site_policy == "site_N"
    op = report.order_params
    rows = []
    for sample in report.per_disorder:
        for part in ("m", "p"):
            key = f"site_n_{part}_residual" if site_n else f"{part}_residual"
            row = _base_row(f"{stem}_{part}", report.n, report.params, op.p, op.q, report.mode)
            row.update(seed=sample["seed"], estimate=sample[key], site_policy=report.site_policy)
            rows.append(row)
    for part, value in (("m", report.mean_sq_m_residual), ("p", report.mean_sq_p_residual)):
        row = _base_row(f"{stem}_{part}", report.n, report.params, op.p, op.q, report.mode)
        row.update(
            seed="aggregate", estimate=value,
            std_error=report.std_errors[f"{part}_residual"],
            site_policy=report.site_policy,
        )
        rows.append(row)
    return rows


def concentration_rows(report: ConcentrationReport) -> List[Dict[str, Any]]:
    """Per-disorder rows, then aggregate rows carrying the 16 S^k / N bounds"""
    op = report.order_params
    bounds = {"r12": report.bound_r12, "r11": report.bound_r11}
    estimates = {"r12": report.est_r12_sq, "r11": report.est_r11_sq}
    rows = []
    for sample in report.per_disorder:
        for part in ("r12", "r11"):
            row = _base_row(f"conc_{part}", report.n, report.params, op.p, op.q, report.mode)
            row.update(seed=sample["seed"], estimate=sample[f"{part}_sq"], bound=bounds[part])
            rows.append(row)
    for part in ("r12", "r11"):
        row = _base_row(f"conc_{part}", report.n, report.params, op.p, op.q, report.mode)
        row.update(
            seed="aggregate", estimate=estimates[part],
            std_error=report.std_errors[f"{part}_sq"], bound=bounds[part],
        )
        rows.append(row)
    return rows


def scaling_rows(report: ScalingReport) -> List[Dict[str, Any]]:
    """Rows of the target experiment at every size, then the fitted slope"""
    rows = []
    for sub in report.reports:
        built = tap_rows(sub) if isinstance(sub, TapResidualReport) else concentration_rows(sub)
        rows.extend(row for row in built if row["experiment"] == report.which)
    first = report.reports[0] if report.reports else None
    fit = {"experiment": f"{report.which}_slope", "seed": "fit",
           "estimate": report.fitted_slope, "std_error": report.slope_std_error}
    if first is not None:
        fit.update(S=first.params.S, beta=first.params.beta, D=first.params.D, h=first.params.h,
                   p=first.order_params.p, q=first.order_params.q, mode=first.mode)
    rows.append(fit)
    return rows


def site_rows(stats: GibbsStats) -> List[Dict[str, Any]]:
    """One row per site with the magnetization and second moment"""
    errors = stats.mcmc_std_errors or {}
    m_se = errors.get("magnetizations")
    p_se = errors.get("second_moments")
    rows = []
    for i in range(stats.n):
        rows.append({
            "site": i,
            "magnetization": stats.magnetizations[i],
            "second_moment": stats.second_moments[i],
            "magnetization_std_error": None if m_se is None else m_se[i],
            "second_moment_std_error": None if p_se is None else p_se[i],
        })
    return rows


def solve_rows(report: SolveReport, params: ModelParams) -> List[Dict[str, Any]]:
    row = dict(params.to_dict())
    row.update(report.to_dict())
    return [row]


# =============================================================================
# RENDERING
# =============================================================================

def header_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Effective configuration as written into file headers"""
    return {key: value for key, value in sorted(config.items()) if key not in _HEADER_EXCLUDED}


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return format_float(value)


def render_csv(columns: Sequence[str], rows: List[Dict[str, Any]], config: Dict[str, Any]) -> str:
    """
    CSV text with '#' comment lines for the tool version and configuration.

    Args:
        columns: Column order
        rows: Row dictionaries (missing cells are left empty)
        config: Effective run configuration

    Returns:
        CSV document
    """
    buffer = io.StringIO()
    buffer.write(f"# {TOOL_NAME} {TOOL_VERSION}\n")
    buffer.write(f"# config: {json.dumps(header_config(config), sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(column)) for column in columns])
    return buffer.getvalue()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if math.isnan(value) or math.isinf(value) else value
    return value


def render_json(payload: Dict[str, Any], config: Dict[str, Any]) -> str:
    """JSON document whose leading keys are the tool, version and configuration"""
    document = {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "config": header_config(config),
        "result": payload,
    }
    return json.dumps(_jsonable(document), indent=2) + "\n"


def write_output(text: str, path: Optional[str]):
    """Write atomically to path, or to stdout when no path is given"""
    if path is None:
        print(text, end="")
        return
    atomic_write_text(path, text)
    logger.info(f"Wrote {path}")


__all__ = [
    "CSV_COLUMNS",
    "SITE_COLUMNS",
    "SOLVE_COLUMNS",
    "CERTIFICATE_COLUMNS",
    "tap_rows",
    "concentration_rows",
    "scaling_rows",
    "site_rows",
    "solve_rows",
    "render_csv",
    "render_json",
    "write_output",
]
