"""
Configuration management for GS-TAP Lab
Numeric defaults plus the run configuration, loaded from environment,
a `key = value` file and command-line flags
"""
import os
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Any

from dotenv import dotenv_values

from .errors import ConfigError
from .models import ModelParams

# =============================================================================
# QUADRATURE CONSTANTS
# =============================================================================

DEFAULT_QUADRATURE_ORDER = 61
# Smallest weight at order 300 is ~1e-261; order 400 underflows to zero
MAX_QUADRATURE_ORDER = 300
# Largest |T(order) - T(2 order)| at a solved point that still counts as resolved
REFINEMENT_TOL = 1e-10
# Exponent arguments above this are evaluated with the largest one factored out
EXP_GUARD_THRESHOLD = 500.0

# =============================================================================
# SOLVER CONSTANTS
# =============================================================================

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
DEFAULT_DAMPING = 1.0
FALLBACK_DAMPING = 0.5
# Consecutive step-norm increases that trigger the damping fallback
STEP_INCREASE_LIMIT = 2
# Floor for q wherever 1/sqrt(q) appears in the derivative diagnostics
Q_FLOOR = 1e-12
# sqrt(L1^2 + L2^2 + L3^2 + L4^2) = sqrt(1 + 16 + 4 + 144) S^4 beta^2
CONTRACTION_CONSTANT = 165.0

# =============================================================================
# GIBBS CONSTANTS
# =============================================================================

ENUMERATION_CAP = 20_000_000
# States per leading-spin block during enumeration
ENUMERATION_BLOCK_STATES = 1 << 16
MAX_SPIN = 10

DEFAULT_SWEEPS = 20_000
DEFAULT_BURN_IN = 1_000
DEFAULT_REPLICAS = 2
BATCH_COUNT = 20
# Sweeps of uniforms drawn per generator call
RANDOM_BLOCK_SWEEPS = 1_024

# RNG stream identifiers (SeedSequence spawn keys)
STREAM_DISORDER = 0
STREAM_CHAIN = 1
STREAM_PAIRS = 2

DISORDER_MAGIC = b"GSDS"
DISORDER_FORMAT_VERSION = 1

# =============================================================================
# EXPERIMENT CONSTANTS
# =============================================================================

DEFAULT_DISORDER_EXACT = 200
DEFAULT_DISORDER_MCMC = 50
MIN_SCALING_POINTS = 3

MODES = ("exact", "mcmc")
SITE_POLICIES = ("site_averaged", "site_N")
SCALING_TARGETS = ("tap_m", "tap_p", "conc_r12", "conc_r11")
COMMANDS = (
    "solve", "enumerate", "mcmc", "tap", "tap-physics",
    "concentration", "scaling", "certificate",
)
OUTPUT_FORMATS = ("csv", "json")

CSV_COLUMNS: List[str] = [
    "experiment", "N", "S", "beta", "D", "h", "p", "q", "seed",
    "estimate", "std_error", "bound", "mode", "site_policy",
]
CSV_SIGNIFICANT_DIGITS = 12

# =============================================================================
# EXIT CODES
# =============================================================================

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

# =============================================================================
# ENVIRONMENT
# =============================================================================

ENV_WORKERS = "GS_TAP_WORKERS"
ENV_MASTER_SEED = "GS_TAP_MASTER_SEED"
ENV_QUADRATURE_ORDER = "GS_TAP_QUADRATURE_ORDER"

TOOL_VERSION = "1.0.0"
TOOL_NAME = "gs-tap-lab"


# =============================================================================
# RUN CONFIGURATION
# =============================================================================

def _parse_int(key: str, raw: Any) -> int:
    if isinstance(raw, int) and not isinstance(raw, bool):
        return raw
    try:
        text = str(raw).strip()
        try:
            return int(text)
        except ValueError:
            # accept scientific notation such as 2e5 when it is integral
            value = float(text)
            if not value.is_integer():
                raise ValueError(text)
            return int(value)
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(key, f"malformed integer {raw!r}")


def _parse_float(key: str, raw: Any) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"malformed number {raw!r}")


def _parse_str(key: str, raw: Any) -> str:
    if raw is None:
        raise ConfigError(key, "missing value")
    return str(raw).strip()


def _parse_grid(key: str, raw: Any) -> List[int]:
    if isinstance(raw, (list, tuple)):
        items = list(raw)
    else:
        items = [part for part in str(raw).replace(" ", "").split(",") if part]
    if not items:
        raise ConfigError(key, f"malformed grid {raw!r}")
    return [_parse_int(key, item) for item in items]


def _parse_optional_int(key: str, raw: Any) -> Optional[int]:
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    return _parse_int(key, raw)


def _parse_optional_str(key: str, raw: Any) -> Optional[str]:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    return str(raw).strip()


@dataclass
class RunConfig:
    """Effective configuration of one batch run"""
    command: str = "solve"
    S: int = 1
    beta: float = 0.0
    D: float = 0.0
    h: float = 0.0
    n: int = 6
    n_grid: List[int] = field(default_factory=lambda: [6, 8, 10, 12])
    n_disorder: Optional[int] = None
    mode: str = "exact"
    site_policy: str = "site_averaged"
    which: str = "tap_m"
    sweeps: int = DEFAULT_SWEEPS
    burn_in: int = DEFAULT_BURN_IN
    replicas: int = DEFAULT_REPLICAS
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    damping: float = DEFAULT_DAMPING
    master_seed: int = 0
    disorder_seed: Optional[int] = None
    disorder_file: Optional[str] = None
    output_path: Optional[str] = None
    output_format: str = "csv"
    workers: int = 1
    enumeration_cap: int = ENUMERATION_CAP

    @classmethod
    def parse_value(cls, key: str, raw: Any) -> Any:
        """Convert a raw (string) value for `key` to the field's type"""
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise ConfigError(key, "unknown key")
        return parser(key, raw)

    @classmethod
    def from_env(cls) -> Dict[str, Any]:
        """Collect overrides from environment variables (after .env loading)"""
        overrides: Dict[str, Any] = {}
        env_map = {
            ENV_WORKERS: "workers",
            ENV_MASTER_SEED: "master_seed",
            ENV_QUADRATURE_ORDER: "quadrature_order",
        }
        for env_name, key in env_map.items():
            raw = os.environ.get(env_name)
            if raw:
                overrides[key] = cls.parse_value(key, raw)
        return overrides

    @classmethod
    def from_file(cls, path: str) -> Dict[str, Any]:
        """
        Read `key = value` lines from a plain-text config file.

        Args:
            path: Config file path

        Returns:
            Dict of parsed overrides

        Raises:
            ConfigError: unknown key or malformed value (message names the key)
        """
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file not found: {path}")
        overrides: Dict[str, Any] = {}
        for raw_key, raw_value in dotenv_values(path).items():
            key = raw_key.strip().replace("-", "_")
            key = _KEY_ALIASES.get(key, key)
            overrides[key] = cls.parse_value(key, raw_value)
        return overrides

    @classmethod
    def from_values(cls, **values: Any) -> "RunConfig":
        """Create a validated config from explicit values (for testing)"""
        for key in values:
            if key not in _FIELD_PARSERS:
                raise ConfigError(key, "unknown key")
        config = cls(**values)
        config.validate()
        return config

    @property
    def model(self) -> ModelParams:
        """Model quadruple (S, beta, D, h) of this run"""
        return ModelParams(S=self.S, beta=self.beta, D=self.D, h=self.h)

    @property
    def resolved_n_disorder(self) -> int:
        """Disorder-sample count with the per-mode default applied"""
        if self.n_disorder is not None:
            return self.n_disorder
        return DEFAULT_DISORDER_EXACT if self.mode == "exact" else DEFAULT_DISORDER_MCMC

    def validate(self):
        """Range-check every field; raises ConfigError naming the key"""
        checks = [
            ("command", self.command in COMMANDS, f"must be one of {', '.join(COMMANDS)}"),
            ("S", 1 <= self.S <= MAX_SPIN, f"must be in [1, {MAX_SPIN}]"),
            ("beta", self.beta >= 0 and _finite(self.beta), "must be finite and >= 0"),
            ("D", _finite(self.D), "must be finite"),
            ("h", _finite(self.h), "must be finite"),
            ("n", self.n >= 1, "must be >= 1"),
            ("n_grid", len(self.n_grid) > 0 and all(v >= 1 for v in self.n_grid), "entries must be >= 1"),
            ("n_disorder", self.n_disorder is None or self.n_disorder >= 1, "must be >= 1"),
            ("mode", self.mode in MODES, f"must be one of {', '.join(MODES)}"),
            ("site_policy", self.site_policy in SITE_POLICIES, f"must be one of {', '.join(SITE_POLICIES)}"),
            ("which", self.which in SCALING_TARGETS, f"must be one of {', '.join(SCALING_TARGETS)}"),
            ("sweeps", self.sweeps > 0, "must be > 0"),
            ("burn_in", self.burn_in >= 0, "must be >= 0"),
            ("replicas", self.replicas >= 1, "must be >= 1"),
            ("quadrature_order", 1 <= self.quadrature_order <= MAX_QUADRATURE_ORDER,
             f"must be in [1, {MAX_QUADRATURE_ORDER}]"),
            ("tol", self.tol > 0, "must be > 0"),
            ("max_iter", self.max_iter >= 1, "must be >= 1"),
            ("damping", 0 < self.damping <= 1, "must be in (0, 1]"),
            ("master_seed", 0 <= self.master_seed < 2**64, "must be in [0, 2^64)"),
            ("disorder_seed", self.disorder_seed is None or 0 <= self.disorder_seed < 2**64,
             "must be in [0, 2^64)"),
            ("output_format", self.output_format in OUTPUT_FORMATS, "must be csv or json"),
            ("workers", self.workers >= 1, "must be >= 1"),
            ("enumeration_cap", self.enumeration_cap >= 1, "must be >= 1"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(key, f"{message} (got {getattr(self, key)!r})")

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary"""
        return asdict(self)


def _finite(value: float) -> bool:
    return value == value and value not in (float("inf"), float("-inf"))


# flag spellings accepted as config-file keys
_KEY_ALIASES = {"output": "output_path", "format": "output_format"}

_FIELD_PARSERS = {
    "command": _parse_str,
    "S": _parse_int,
    "beta": _parse_float,
    "D": _parse_float,
    "h": _parse_float,
    "n": _parse_int,
    "n_grid": _parse_grid,
    "n_disorder": _parse_optional_int,
    "mode": _parse_str,
    "site_policy": _parse_str,
    "which": _parse_str,
    "sweeps": _parse_int,
    "burn_in": _parse_int,
    "replicas": _parse_int,
    "quadrature_order": _parse_int,
    "tol": _parse_float,
    "max_iter": _parse_int,
    "damping": _parse_float,
    "master_seed": _parse_int,
    "disorder_seed": _parse_optional_int,
    "disorder_file": _parse_optional_str,
    "output_path": _parse_optional_str,
    "output_format": _parse_str,
    "workers": _parse_int,
    "enumeration_cap": _parse_int,
}
