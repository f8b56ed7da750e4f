"""
Command-line front door for GS-TAP Lab
Parses the run configuration, dispatches one command and writes its results
"""
import argparse
import logging
import sys
from typing import Any, Callable, Dict, Optional, Sequence

from dotenv import load_dotenv

from .config import (
    COMMANDS,
    CSV_COLUMNS,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    TOOL_NAME,
    TOOL_VERSION,
    RunConfig,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DisorderFormatError,
    EnumerationCapError,
    GSLabError,
    QuadratureError,
)
from .models import DisorderSample, McmcSettings
from .quadrature import build_rule
from .services import experiments, fixedpoint, gibbs, reporting
from .utils import derive_seed

logger = logging.getLogger(__name__)

# flag name -> RunConfig field
FLAG_FIELDS = {
    "S": "S",
    "beta": "beta",
    "D": "D",
    "h": "h",
    "n": "n",
    "n-grid": "n_grid",
    "n-disorder": "n_disorder",
    "mode": "mode",
    "site-policy": "site_policy",
    "which": "which",
    "sweeps": "sweeps",
    "burn-in": "burn_in",
    "replicas": "replicas",
    "quadrature-order": "quadrature_order",
    "tol": "tol",
    "max-iter": "max_iter",
    "damping": "damping",
    "master-seed": "master_seed",
    "disorder-seed": "disorder_seed",
    "disorder-file": "disorder_file",
    "output": "output_path",
    "format": "output_format",
    "workers": "workers",
    "enumeration-cap": "enumeration_cap",
}


class _ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose errors become ConfigError (exit 1, not 2)"""

    def error(self, message: str):
        raise ConfigError("arguments", message)


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per entry of COMMANDS, all sharing the same flags"""
    common = argparse.ArgumentParser(add_help=False)
    for flag, dest in FLAG_FIELDS.items():
        common.add_argument(f"--{flag}", dest=dest, default=None, metavar=dest.upper())
    common.add_argument("--config", dest="config_file", default=None,
                        help="plain-text `key = value` file; flags override it")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = _ArgumentParser(prog=TOOL_NAME, description="Ghatak-Sherrington spin-glass TAP laboratory")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_ArgumentParser)
    commands.required = True
    for command in COMMANDS:
        commands.add_parser(command, parents=[common])
    return parser


def parse_config(args: Sequence[str], config_file: Optional[str] = None) -> RunConfig:
    """
    Build the effective RunConfig from defaults, environment, file and flags.

    Args:
        args: Command line without the program name
        config_file: Config file path; a --config flag takes precedence

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: unknown key, malformed or out-of-range value
    """
    namespace = build_parser().parse_args(list(args))
    values: Dict[str, Any] = {"command": namespace.command}
    values.update(RunConfig.from_env())

    path = namespace.config_file or config_file
    if path:
        from_file = RunConfig.from_file(path)
        from_file.pop("command", None)
        values.update(from_file)

    for dest in FLAG_FIELDS.values():
        raw = getattr(namespace, dest)
        if raw is not None:
            values[dest] = RunConfig.parse_value(dest, raw)

    config = RunConfig(**values)
    config.validate()
    return config


# =============================================================================
# COMMAND HANDLERS
# =============================================================================

def _emit(config: RunConfig, columns, rows, payload: Dict[str, Any], summary: str):
    if config.output_format == "csv":
        text = reporting.render_csv(columns, rows, config.to_dict())
    else:
        text = reporting.render_json(payload, config.to_dict())
    reporting.write_output(text, config.output_path)
    # stdout carries the document when there is no output file
    print(summary, file=sys.stdout if config.output_path else sys.stderr)


def _mcmc_settings(config: RunConfig) -> McmcSettings:
    return McmcSettings(sweeps=config.sweeps, burn_in=config.burn_in, replicas=config.replicas)


def _run_certificate(config: RunConfig):
    params = config.model
    certificate = fixedpoint.contraction_certificate(params)
    threshold = fixedpoint.beta_tilde(params.S)
    within = params.beta < threshold
    row = {
        "S": params.S, "beta": params.beta, "certificate": certificate,
        "beta_tilde": threshold, "within_contraction": within,
    }
    regime = "within contraction regime" if within else "outside contraction regime"
    _emit(config, reporting.CERTIFICATE_COLUMNS, [row], row,
          f"certificate {certificate:.6f} (beta_tilde(S={params.S}) = {threshold:.6f}): {regime}")


def _run_solve(config: RunConfig):
    params = config.model
    report = fixedpoint.solve(
        params, build_rule(config.quadrature_order),
        tol=config.tol, max_iter=config.max_iter, damping=config.damping,
    )
    payload = dict(params.to_dict())
    payload.update(report.to_dict())
    _emit(config, reporting.SOLVE_COLUMNS, reporting.solve_rows(report, params), payload,
          f"solve S={params.S} beta={params.beta:g} D={params.D:g} h={params.h:g}: "
          f"p={report.solution.p:.12g} q={report.solution.q:.12g} "
          f"after {report.iterations} iterations (certificate {report.contraction_certificate:.6f}, "
          f"quadrature order {report.quadrature_order}"
          f"{'' if report.quadrature_certified else ', NOT resolved'})")
    if not report.converged:
        raise ConvergenceError(
            f"no convergence within {report.iterations} iterations (last step {report.final_step_norm:.3g})"
        )


def _disorder_for(config: RunConfig) -> DisorderSample:
    if config.disorder_file:
        disorder = gibbs.load_disorder(config.disorder_file)
        if disorder.n != config.n:
            logger.info(f"Using n={disorder.n} from {config.disorder_file}")
        return disorder
    seed = config.disorder_seed if config.disorder_seed is not None else derive_seed(config.master_seed, 0)
    return gibbs.generate_disorder(config.n, seed)


def _run_sites(config: RunConfig):
    params = config.model
    disorder = _disorder_for(config)
    if config.command == "enumerate":
        stats = gibbs.enumerate_states(disorder, params, cap=config.enumeration_cap)
    else:
        stats = gibbs.mcmc_run(
            disorder, params, sweeps=config.sweeps, burn_in=config.burn_in,
            replicas=config.replicas, rng_seed=disorder.seed,
        )
    payload = {"n": disorder.n, "seed": disorder.seed, "params": params.to_dict()}
    payload.update(stats.to_dict())
    mean_m = float(stats.magnetizations.mean())
    mean_p = float(stats.second_moments.mean())
    _emit(config, reporting.SITE_COLUMNS, reporting.site_rows(stats), payload,
          f"{config.command} n={disorder.n} seed={disorder.seed}: "
          f"mean <s> = {mean_m:.6g}, mean <s^2> = {mean_p:.6g}")


def _experiment_kwargs(config: RunConfig) -> Dict[str, Any]:
    return dict(
        n_disorder=config.resolved_n_disorder,
        mode=config.mode,
        mcmc=_mcmc_settings(config),
        master_seed=config.master_seed,
        workers=config.workers,
        quadrature_order=config.quadrature_order,
        cap=config.enumeration_cap,
    )


def _run_tap(config: RunConfig):
    kwargs = _experiment_kwargs(config)
    if config.command == "tap":
        report = experiments.tap_residual_experiment(
            config.model, config.n, site_policy=config.site_policy, **kwargs
        )
    else:
        report = experiments.physicist_tap_residual(config.model, config.n, **kwargs)
    _emit(config, CSV_COLUMNS, reporting.tap_rows(report), report.to_dict(),
          f"{report.experiment} N={report.n} ({report.n_disorder} samples, {report.mode}): "
          f"m-residual {report.mean_sq_m_residual:.6g} +- {report.std_errors['m_residual']:.2g}, "
          f"p-residual {report.mean_sq_p_residual:.6g} +- {report.std_errors['p_residual']:.2g}")


def _run_concentration(config: RunConfig):
    report = experiments.concentration_experiment(config.model, config.n, **_experiment_kwargs(config))
    verdict = "within bounds" if report.within_bounds else "BOUND EXCEEDED"
    _emit(config, CSV_COLUMNS, reporting.concentration_rows(report), report.to_dict(),
          f"concentration N={report.n}: <(R12-q)^2> = {report.est_r12_sq:.6g} (<= {report.bound_r12:.6g}), "
          f"<(R11-p)^2> = {report.est_r11_sq:.6g} (<= {report.bound_r11:.6g}): {verdict}")


def _run_scaling(config: RunConfig):
    report = experiments.scaling_study(
        config.model, config.n_grid, which=config.which, **_experiment_kwargs(config)
    )
    _emit(config, CSV_COLUMNS, reporting.scaling_rows(report), report.to_dict(),
          f"scaling {report.which} over N={report.n_grid}: slope {report.fitted_slope:.4f} "
          f"+- {report.slope_std_error:.4f}")


HANDLERS: Dict[str, Callable[[RunConfig], None]] = {
    "certificate": _run_certificate,
    "solve": _run_solve,
    "enumerate": _run_sites,
    "mcmc": _run_sites,
    "tap": _run_tap,
    "tap-physics": _run_tap,
    "concentration": _run_concentration,
    "scaling": _run_scaling,
}


# =============================================================================
# ENTRY POINTS
# =============================================================================

def exit_code_for(error: BaseException) -> int:
    """Map an exception to the exit-code contract (1 usage, 2 numeric, 3 I/O)"""
    if isinstance(error, (DisorderFormatError, OSError)):
        return EXIT_IO
    if isinstance(error, (ConvergenceError, EnumerationCapError, QuadratureError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_USAGE


def run(config: RunConfig) -> int:
    """
    Execute one command.

    Args:
        config: Validated configuration

    Returns:
        Exit status (0 success, 1 usage, 2 numeric, 3 I/O)
    """
    try:
        HANDLERS[config.command](config)
    except (GSLabError, ValueError, ArithmeticError, OSError) as error:
        logger.error(f"{config.command} failed: {error}")
        return exit_code_for(error)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, configure logging and run; returns the exit status"""
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    level = logging.DEBUG if "--verbose" in argv else logging.WARNING if "--quiet" in argv else logging.INFO
    logging.basicConfig(level=level)
    try:
        config = parse_config(argv)
    except (ConfigError, ValueError) as error:
        logger.error(str(error))
        return EXIT_USAGE
    except OSError as error:
        logger.error(str(error))
        return EXIT_IO
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
