"""
Data models for GS-TAP Lab
"""
import math
from dataclasses import dataclass, field
from typing import List, Dict, Optional, Any

import numpy as np

from .errors import ConfigError, SizeMismatchError


@dataclass(frozen=True)
class ModelParams:
    """The quadruple (S, beta, D, h) defining the Ghatak-Sherrington model"""
    S: int
    beta: float
    D: float
    h: float

    def __post_init__(self):
        if int(self.S) != self.S or self.S < 1:
            raise ConfigError("S", f"must be a positive integer (got {self.S!r})")
        if not self.beta >= 0:
            raise ConfigError("beta", f"must be >= 0 (got {self.beta!r})")

    @property
    def n_states(self) -> int:
        """Number of single-spin states 2S+1"""
        return 2 * self.S + 1

    @property
    def spin_values(self) -> np.ndarray:
        """Single-spin states -S..S in increasing order"""
        return np.arange(-self.S, self.S + 1, dtype=np.float64)

    @property
    def box_size(self) -> float:
        """Upper edge S^2 of the (p, q) box"""
        return float(self.S * self.S)

    def with_changes(self, **changes: Any) -> "ModelParams":
        """Copy with some fields replaced"""
        values = self.to_dict()
        values.update(changes)
        return ModelParams(**values)

    def to_dict(self) -> Dict:
        """Convert to dictionary for JSON serialization"""
        return {"S": self.S, "beta": self.beta, "D": self.D, "h": self.h}


@dataclass(frozen=True)
class OrderParams:
    """The pair (p, q) solving the order-parameter equations"""
    p: float
    q: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.q], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "OrderParams":
        return cls(p=float(values[0]), q=float(values[1]))

    def in_box(self, S: int, slack: float = 0.0) -> bool:
        """Whether (p, q) lies in [0, S^2]^2"""
        top = S * S + slack
        return -slack <= self.p <= top and -slack <= self.q <= top

    def to_dict(self) -> Dict:
        return {"p": self.p, "q": self.q}


@dataclass
class SolveReport:
    """Outcome of a fixed-point solve"""
    solution: OrderParams
    iterations: int
    final_step_norm: float
    contraction_certificate: float
    converged: bool
    tol: float
    residual_norm: float = math.nan
    damping_used: float = 1.0
    within_hypothesis: bool = True
    quadrature_order: int = 0
    refinement_gap: float = math.nan
    quadrature_certified: bool = True

    def to_dict(self) -> Dict:
        """Convert to dictionary for JSON serialization"""
        return {
            "p": self.solution.p,
            "q": self.solution.q,
            "iterations": self.iterations,
            "final_step_norm": self.final_step_norm,
            "residual_norm": self.residual_norm,
            "contraction_certificate": self.contraction_certificate,
            "converged": self.converged,
            "tol": self.tol,
            "damping_used": self.damping_used,
            "within_hypothesis": self.within_hypothesis,
            "quadrature_order": self.quadrature_order,
            "refinement_gap": self.refinement_gap,
            "quadrature_certified": self.quadrature_certified,
        }


@dataclass(frozen=True, eq=False)
class DisorderSample:
    """Seeded Gaussian couplings g_ij, i < j, stored as the row-major upper triangle"""
    n: int
    couplings: np.ndarray
    seed: int

    def __post_init__(self):
        expected = self.n * (self.n - 1) // 2
        if self.couplings.shape != (expected,):
            raise SizeMismatchError(
                f"disorder for n={self.n} needs {expected} couplings, got {self.couplings.shape}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """Full symmetric n x n coupling matrix with zero diagonal"""
        full = np.zeros((self.n, self.n), dtype=np.float64)
        rows, cols = np.triu_indices(self.n, k=1)
        full[rows, cols] = self.couplings
        full[cols, rows] = self.couplings
        return full

    def to_dict(self) -> Dict:
        return {"n": self.n, "seed": self.seed, "couplings": self.couplings.tolist()}


@dataclass(frozen=True, eq=False)
class SpinConfig:
    """One configuration sigma in {-S, ..., S}^n"""
    spins: np.ndarray

    @property
    def n(self) -> int:
        return int(self.spins.shape[0])

    @classmethod
    def of(cls, values) -> "SpinConfig":
        return cls(spins=np.asarray(values, dtype=np.int64))

    def validate(self, S: int):
        """Every entry must be an integer of magnitude at most S"""
        if np.any(self.spins != np.round(self.spins)) or np.any(np.abs(self.spins) > S):
            raise ConfigError("spins", f"entries must be integers in [-{S}, {S}]")


@dataclass
class OverlapMoments:
    """Estimates of <(R12 - q)^2> and <(R11 - p)^2> for a supplied (p, q)"""
    r12_sq: float
    r11_sq: float
    p: float
    q: float
    r12_sq_std_error: Optional[float] = None
    r11_sq_std_error: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "r12_sq": self.r12_sq,
            "r11_sq": self.r11_sq,
            "p": self.p,
            "q": self.q,
            "r12_sq_std_error": self.r12_sq_std_error,
            "r11_sq_std_error": self.r11_sq_std_error,
        }


@dataclass
class McmcSettings:
    """Chain lengths for heat-bath runs; `sweeps` are measured after `burn_in`"""
    sweeps: int = 20_000
    burn_in: int = 1_000
    replicas: int = 2

    def validate(self, overlaps: bool = False):
        """Positive sweeps, non-negative burn-in, at least one replica (two for overlaps)"""
        if int(self.sweeps) != self.sweeps or self.sweeps < 1:
            raise ConfigError("sweeps", f"must be a positive integer (got {self.sweeps!r})")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError("burn_in", f"must be a non-negative integer (got {self.burn_in!r})")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ConfigError("replicas", f"must be >= 1 (got {self.replicas!r})")
        if overlaps and self.replicas < 2:
            raise ConfigError("replicas", "overlap moments need at least 2 replicas")

    def to_dict(self) -> Dict:
        return {"sweeps": self.sweeps, "burn_in": self.burn_in, "replicas": self.replicas}


@dataclass
class GibbsStats:
    """Thermal averages for one disorder sample"""
    magnetizations: np.ndarray
    second_moments: np.ndarray
    log_partition: float
    mode: str  # exact or mcmc
    overlap_moments: Optional[OverlapMoments] = None
    mcmc_std_errors: Optional[Dict[str, np.ndarray]] = None
    pair_correlations: Optional[np.ndarray] = None
    square_correlations: Optional[np.ndarray] = None
    n_samples: Optional[int] = None
    replicas: Optional[int] = None

    @property
    def n(self) -> int:
        return int(self.magnetizations.shape[0])

    def exact_overlap_moments(self, p: float, q: float) -> OverlapMoments:
        """
        Replica moments from the exact correlation matrices.

        <(R12-q)^2> = (1/N^2) sum_ij <s_i s_j>^2 - (2q/N) sum_i <s_i>^2 + q^2
        <(R11-p)^2> = (1/N^2) sum_ij <s_i^2 s_j^2> - (2p/N) sum_i <s_i^2> + p^2

        Args:
            p: Self-overlap order parameter
            q: Overlap order parameter

        Returns:
            OverlapMoments (clamped at zero against round-off)
        """
        if self.pair_correlations is None or self.square_correlations is None:
            raise ValueError("exact overlap moments need enumeration correlations")
        n = self.n
        r12 = (
            np.sum(self.pair_correlations ** 2) / n ** 2
            - 2.0 * q * np.sum(self.magnetizations ** 2) / n
            + q * q
        )
        r11 = (
            np.sum(self.square_correlations) / n ** 2
            - 2.0 * p * np.sum(self.second_moments) / n
            + p * p
        )
        return OverlapMoments(r12_sq=max(float(r12), 0.0), r11_sq=max(float(r11), 0.0), p=p, q=q)

    def to_dict(self) -> Dict:
        """Convert to dictionary for JSON serialization"""
        result = {
            "mode": self.mode,
            "magnetizations": self.magnetizations.tolist(),
            "second_moments": self.second_moments.tolist(),
            "log_partition": None if math.isnan(self.log_partition) else self.log_partition,
            "overlap_moments": self.overlap_moments.to_dict() if self.overlap_moments else None,
        }
        if self.mcmc_std_errors is not None:
            result["mcmc_std_errors"] = {k: v.tolist() for k, v in self.mcmc_std_errors.items()}
            result["n_samples"] = self.n_samples
            result["replicas"] = self.replicas
        return result


@dataclass
class TapResidualReport:
    """Disorder-averaged squared TAP residuals"""
    experiment: str  # tap or tap-physics
    n: int
    params: ModelParams
    order_params: OrderParams
    n_disorder: int
    mean_sq_m_residual: float
    mean_sq_p_residual: float
    site_policy: str
    mode: str
    std_errors: Dict[str, float]
    site_n_m_residual: float = math.nan
    site_n_p_residual: float = math.nan
    per_disorder: List[Dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "experiment": self.experiment,
            "n": self.n,
            "params": self.params.to_dict(),
            "order_params": self.order_params.to_dict(),
            "n_disorder": self.n_disorder,
            "mean_sq_m_residual": self.mean_sq_m_residual,
            "mean_sq_p_residual": self.mean_sq_p_residual,
            "site_n_m_residual": self.site_n_m_residual,
            "site_n_p_residual": self.site_n_p_residual,
            "site_policy": self.site_policy,
            "mode": self.mode,
            "std_errors": dict(self.std_errors),
            "per_disorder": list(self.per_disorder),
        }


@dataclass
class ConcentrationReport:
    """Disorder-averaged overlap fluctuations against their 1/N bounds"""
    n: int
    params: ModelParams
    order_params: OrderParams
    n_disorder: int
    est_r12_sq: float
    est_r11_sq: float
    mode: str
    std_errors: Dict[str, float]
    per_disorder: List[Dict[str, float]] = field(default_factory=list)

    @property
    def bound_r12(self) -> float:
        """16 S^2 / N"""
        return 16.0 * self.params.S ** 2 / self.n

    @property
    def bound_r11(self) -> float:
        """16 S^4 / N"""
        return 16.0 * self.params.S ** 4 / self.n

    @property
    def bound_r12_fourth(self) -> float:
        """64 S^4 / N, bound on the fourth moment of R12 - q"""
        return 64.0 * self.params.S ** 4 / self.n

    @property
    def bound_r11_fourth(self) -> float:
        """64 S^6 / N, bound on the fourth moment of R11 - p"""
        return 64.0 * self.params.S ** 6 / self.n

    @property
    def within_bounds(self) -> bool:
        return self.est_r12_sq <= self.bound_r12 and self.est_r11_sq <= self.bound_r11

    def to_dict(self) -> Dict:
        return {
            "n": self.n,
            "params": self.params.to_dict(),
            "order_params": self.order_params.to_dict(),
            "n_disorder": self.n_disorder,
            "est_r12_sq": self.est_r12_sq,
            "est_r11_sq": self.est_r11_sq,
            "bound_r12": self.bound_r12,
            "bound_r11": self.bound_r11,
            "bound_r12_fourth": self.bound_r12_fourth,
            "bound_r11_fourth": self.bound_r11_fourth,
            "within_bounds": self.within_bounds,
            "mode": self.mode,
            "std_errors": dict(self.std_errors),
            "per_disorder": list(self.per_disorder),
        }


@dataclass
class ScalingReport:
    """Residuals across system sizes and their log-log least-squares fit"""
    which: str
    n_grid: List[int]
    residuals: List[float]
    std_errors: List[float]
    fitted_slope: float
    fitted_intercept: float
    slope_std_error: float = math.nan
    reports: List[Any] = field(default_factory=list)

    @property
    def decreasing(self) -> bool:
        """Whether residuals strictly decrease along the grid"""
        return all(b < a for a, b in zip(self.residuals, self.residuals[1:]))

    def to_dict(self) -> Dict:
        return {
            "which": self.which,
            "n_grid": list(self.n_grid),
            "residuals": list(self.residuals),
            "std_errors": list(self.std_errors),
            "fitted_slope": self.fitted_slope,
            "fitted_intercept": self.fitted_intercept,
            "slope_std_error": self.slope_std_error,
            "decreasing": self.decreasing,
            "reports": [r.to_dict() for r in self.reports],
        }


def as_spins(config) -> np.ndarray:
    """Spin array of a SpinConfig or any sequence of spins"""
    values = config.spins if isinstance(config, SpinConfig) else config
    return np.asarray(values, dtype=np.float64)
