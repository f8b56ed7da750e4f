"""
Fixed-point service for GS-TAP Lab
Integrands of the (p, q) equations, the self-map T(p, q) = (G, F), its
contraction certificate and the damped Picard solver
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from ..config import (
    DEFAULT_TOL,
    DEFAULT_MAX_ITER,
    DEFAULT_DAMPING,
    FALLBACK_DAMPING,
    STEP_INCREASE_LIMIT,
    Q_FLOOR,
    CONTRACTION_CONSTANT,
    STREAM_PAIRS,
    MAX_QUADRATURE_ORDER,
    REFINEMENT_TOL,
)
from ..errors import QuadratureError
from ..models import ModelParams, OrderParams, SolveReport
from ..quadrature import GaussianRule, cached_rule, expect_many
from ..single_site import moments
from ..utils import make_rng

logger = logging.getLogger(__name__)


# =============================================================================
# INTEGRANDS
# =============================================================================

def _field_and_crystal(x, params: ModelParams, op: OrderParams) -> Tuple[np.ndarray, float]:
    """Cavity field sqrt(q) beta x + h and shifted crystal field D + beta^2 (p-q) / 2"""
    field = math.sqrt(max(op.q, 0.0)) * params.beta * np.asarray(x, dtype=np.float64) + params.h
    crystal = params.D + 0.5 * params.beta ** 2 * (op.p - op.q)
    return field, crystal


def _moment(x, params: ModelParams, op: OrderParams, power: int):
    field, crystal = _field_and_crystal(x, params, op)
    value = moments(field, crystal, params.S, powers=(power,))[0]
    return float(value) if np.ndim(value) == 0 else value


def integrand_f(x, params: ModelParams, op: OrderParams):
    """1 / (1 + sum_g 2ch[g(sqrt(q) beta x + h)] exp(g^2 [D + beta^2 (p-q)/2]))"""
    return _moment(x, params, op, 0)


def phi(x, params: ModelParams, op: OrderParams):
    """sum_g g^2 kappa_ch(x) f(x); the integrand of the p equation, <= S^2"""
    return _moment(x, params, op, 2)


def psi(x, params: ModelParams, op: OrderParams):
    """sum_g g kappa_sh(x) f(x); odd in sqrt(q) beta x + h, |psi| <= S"""
    return _moment(x, params, op, 1)


def theta(x, params: ModelParams, op: OrderParams):
    """sum_g g^4 kappa_ch(x) f(x), <= S^4"""
    return _moment(x, params, op, 4)


def eta(x, params: ModelParams, op: OrderParams):
    """sum_g g^3 kappa_sh(x) f(x), |eta| <= S^3"""
    return _moment(x, params, op, 3)


def _all_moments(x, params: ModelParams, op: OrderParams):
    field, crystal = _field_and_crystal(x, params, op)
    return moments(field, crystal, params.S, powers=(1, 2, 3, 4))


def _slope(params: ModelParams, op: OrderParams) -> float:
    return math.sqrt(max(op.q, Q_FLOOR)) * params.beta


def phi_prime(x, params: ModelParams, op: OrderParams):
    """d phi / dx = sqrt(q) beta (eta - phi psi)"""
    m1, m2, m3, _ = _all_moments(x, params, op)
    return _slope(params, op) * (m3 - m2 * m1)


def psi_prime(x, params: ModelParams, op: OrderParams):
    """d psi / dx = sqrt(q) beta (phi - psi^2)"""
    m1, m2, _, _ = _all_moments(x, params, op)
    return _slope(params, op) * (m2 - m1 ** 2)


def eta_prime(x, params: ModelParams, op: OrderParams):
    """d eta / dx = sqrt(q) beta (theta - eta psi)"""
    m1, _, m3, m4 = _all_moments(x, params, op)
    return _slope(params, op) * (m4 - m3 * m1)


# =============================================================================
# SELF-MAP T(p, q) = (G, F)
# =============================================================================

def _rule_or_default(rule: Optional[GaussianRule]) -> GaussianRule:
    return rule if rule is not None else cached_rule()


def map_G(params: ModelParams, op: OrderParams, rule: Optional[GaussianRule] = None) -> float:
    """G(beta, p, q) = E[phi(X)], in [0, S^2]"""
    rule = _rule_or_default(rule)
    return expect_many(rule, lambda x: phi(x, params, op))


def map_F(params: ModelParams, op: OrderParams, rule: Optional[GaussianRule] = None) -> float:
    """
    F(beta, p, q) = E[psi(X)^2], in [0, S^2].

    The square sits inside the expectation: q is the Gaussian average of the
    squared cavity magnetization, the analogue of q = E tanh^2(beta sqrt(q) X + h).
    """
    rule = _rule_or_default(rule)
    return expect_many(rule, lambda x: psi(x, params, op) ** 2)


def apply_map(params: ModelParams, op: OrderParams, rule: Optional[GaussianRule] = None) -> OrderParams:
    """T(p, q) = (G, F) in one pass over the nodes"""
    rule = _rule_or_default(rule)
    field, crystal = _field_and_crystal(rule.nodes, params, op)
    m1, m2 = moments(field, crystal, params.S, powers=(1, 2))
    G = expect_many(rule, lambda _: m2)
    F = expect_many(rule, lambda _: m1 ** 2)
    return OrderParams(p=G, q=F)


# =============================================================================
# CONTRACTION CERTIFICATE
# =============================================================================

def contraction_certificate(params: ModelParams) -> float:
    """sqrt(165) S^4 beta^2; below 1 the map T is a contraction of [0, S^2]^2"""
    return math.sqrt(CONTRACTION_CONSTANT) * params.S ** 4 * params.beta ** 2


def beta_tilde(S: int) -> float:
    """1 / (165^{1/4} S^2), the largest beta with a certified contraction"""
    return 1.0 / (CONTRACTION_CONSTANT ** 0.25 * S ** 2)


def lipschitz_bounds(params: ModelParams) -> Tuple[float, float, float, float]:
    """
    Bounds L1..L4 on |dG/dp|, |dG/dq|, |dF/dp|, |dF/dq|.

    sqrt(L1^2 + L2^2 + L3^2 + L4^2) equals the contraction certificate.
    """
    unit = params.S ** 4 * params.beta ** 2
    return unit, 4.0 * unit, 2.0 * unit, 12.0 * unit


def jacobian(params: ModelParams, op: OrderParams, rule: Optional[GaussianRule] = None) -> np.ndarray:
    """
    Partial derivatives of T in (p, q) from their Gaussian-expectation forms.

    dG/dp = E[beta^2/2 (theta - phi^2)]
    dG/dq = E[beta/(2 sqrt q) (eta' - psi' phi - psi phi') + beta^2/2 (phi^2 - theta)]
    dF/dp = E[beta^2 psi (eta - psi phi)]
    dF/dq = E[beta/sqrt q (psi' phi + psi phi' - 3 psi^2 psi') + beta^2 (psi^2 phi - psi eta)]

    q is floored at Q_FLOOR where 1/sqrt(q) appears.

    Returns:
        2x2 array [[dG/dp, dG/dq], [dF/dp, dF/dq]]
    """
    rule = _rule_or_default(rule)
    beta = params.beta
    root_q = math.sqrt(max(op.q, Q_FLOOR))
    m1, m2, m3, m4 = _all_moments(rule.nodes, params, op)
    d_phi = phi_prime(rule.nodes, params, op)
    d_psi = psi_prime(rule.nodes, params, op)
    d_eta = eta_prime(rule.nodes, params, op)

    def mean(values):
        return expect_many(rule, lambda _: values)

    dG_dp = mean(0.5 * beta ** 2 * (m4 - m2 ** 2))
    dG_dq = mean(
        beta / (2.0 * root_q) * (d_eta - d_psi * m2 - m1 * d_phi)
        + 0.5 * beta ** 2 * (m2 ** 2 - m4)
    )
    dF_dp = mean(beta ** 2 * m1 * (m3 - m1 * m2))
    dF_dq = mean(
        beta / root_q * (d_psi * m2 + m1 * d_phi - 3.0 * m1 ** 2 * d_psi)
        + beta ** 2 * (m1 ** 2 * m2 - m1 * m3)
    )
    return np.array([[dG_dp, dG_dq], [dF_dp, dF_dq]])


def empirical_lipschitz(
    params: ModelParams,
    rule: Optional[GaussianRule] = None,
    n_pairs: int = 1000,
    seed: int = 0,
) -> float:
    """
    Largest ratio |T(u) - T(v)|_2 / |u - v|_2 over random pairs in the box.

    Args:
        params: Model parameters
        rule: Quadrature rule
        n_pairs: Number of random pairs
        seed: Seed for the pair generator

    Returns:
        Measured Lipschitz ratio
    """
    rule = _rule_or_default(rule)
    rng = make_rng(seed, STREAM_PAIRS)
    points = rng.uniform(0.0, params.box_size, size=(n_pairs, 2, 2))
    worst = 0.0
    for u, v in points:
        gap = np.linalg.norm(u - v)
        if gap == 0:
            continue
        tu = apply_map(params, OrderParams.from_array(u), rule).as_array()
        tv = apply_map(params, OrderParams.from_array(v), rule).as_array()
        worst = max(worst, float(np.linalg.norm(tu - tv) / gap))
    return worst


# =============================================================================
# SOLVER
# =============================================================================

def _clamp(values: np.ndarray, top: float) -> np.ndarray:
    return np.clip(values, 0.0, top)


def _refined_order(order: int) -> int:
    return min(2 * order, MAX_QUADRATURE_ORDER)


def refinement_gap(params: ModelParams, op: OrderParams, rule: Optional[GaussianRule] = None) -> float:
    """
    Sup-norm change of T(p, q) when the quadrature order doubles.

    At MAX_QUADRATURE_ORDER the comparison is against half that order instead.

    Args:
        params: Model parameters
        op: Point at which T is compared
        rule: Base rule (order 61 by default)

    Returns:
        max(|G_n - G_2n|, |F_n - F_2n|)
    """
    rule = _rule_or_default(rule)
    other = _refined_order(rule.order)
    if other == rule.order:
        other = rule.order // 2
    base = apply_map(params, op, rule).as_array()
    compared = apply_map(params, op, cached_rule(other)).as_array()
    return float(np.max(np.abs(base - compared)))


def _iterate(params: ModelParams, rule: GaussianRule, current: np.ndarray, tol: float,
             budget: int, damping: float) -> Tuple[np.ndarray, int, float, bool, float]:
    """Damped Picard steps until the step norm reaches tol or the budget runs out"""
    top = params.box_size
    step = math.inf
    increases = 0
    used = 0
    for used in range(1, budget + 1):
        image = apply_map(params, OrderParams.from_array(current), rule).as_array()
        candidate = _clamp((1.0 - damping) * current + damping * image, top)
        new_step = float(np.max(np.abs(candidate - current)))
        if not math.isfinite(new_step):
            raise QuadratureError(f"fixed-point step is not finite at iteration {used}")
        increases = increases + 1 if new_step > step else 0
        step = new_step
        current = candidate
        if step <= tol:
            return current, used, step, True, damping
        if increases >= STEP_INCREASE_LIMIT and damping > FALLBACK_DAMPING:
            logger.warning(
                f"Step norm grew {increases} times in a row at iteration {used}; "
                f"damping {damping} -> {FALLBACK_DAMPING}"
            )
            damping = FALLBACK_DAMPING
            increases = 0
    return current, used, step, False, damping


def solve(
    params: ModelParams,
    rule: Optional[GaussianRule] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = DEFAULT_DAMPING,
    initial: Optional[OrderParams] = None,
    refine: bool = True,
) -> SolveReport:
    """
    Solve p = G(p, q), q = F(p, q) by damped Picard iteration.

    Iterates (p, q) <- (1 - d)(p, q) + d T(p, q) from (S^2, 0), clamping to
    the box each step. If the step norm grows twice in a row, damping drops
    to 0.5 for the rest of the run. Non-convergence is reported, not raised.

    Once converged, T is re-evaluated at the solution with twice the
    quadrature order. While the two disagree by more than REFINEMENT_TOL the
    order is doubled (up to MAX_QUADRATURE_ORDER) and the iteration resumes
    from the current point. A solution that never agrees is returned with
    quadrature_certified=False.

    Args:
        params: Model parameters
        rule: Quadrature rule (order 61 by default)
        tol: Sup-norm step tolerance
        max_iter: Iteration budget over all quadrature orders
        damping: Initial damping in (0, 1]
        initial: Starting point (defaults to (S^2, 0))
        refine: Raise the quadrature order when the refinement check fails

    Returns:
        SolveReport with the last iterate and diagnostics
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol!r}")
    if not 0 < damping <= 1:
        raise ValueError(f"damping must be in (0, 1], got {damping!r}")
    rule = _rule_or_default(rule)
    top = params.box_size
    start = initial if initial is not None else OrderParams(p=top, q=0.0)
    if not start.in_box(params.S):
        logger.warning(f"Initial point ({start.p}, {start.q}) clamped into [0, {top:g}]^2")
    current = _clamp(start.as_array(), top)

    certificate = contraction_certificate(params)
    within = params.h >= 0 and certificate < 1.0
    if params.h < 0:
        logger.warning(f"h={params.h} < 0 lies outside the uniqueness hypothesis (h >= 0)")

    current, iterations, step, converged, damping = _iterate(params, rule, current, tol, max_iter, damping)
    gap = refinement_gap(params, OrderParams.from_array(current), rule)
    while (refine and converged and gap > REFINEMENT_TOL
           and rule.order < MAX_QUADRATURE_ORDER and iterations < max_iter):
        order = _refined_order(rule.order)
        logger.info(f"Quadrature order {rule.order} unresolved (gap {gap:.3g}); retrying at order {order}")
        rule = cached_rule(order)
        current, used, step, converged, damping = _iterate(
            params, rule, current, tol, max_iter - iterations, damping
        )
        iterations += used
        gap = refinement_gap(params, OrderParams.from_array(current), rule)

    certified = gap <= REFINEMENT_TOL
    solution = OrderParams.from_array(current)
    residual = float(np.max(np.abs(apply_map(params, solution, rule).as_array() - current)))
    if converged:
        logger.debug(f"Solved (p, q) = ({solution.p:.12g}, {solution.q:.12g}) in {iterations} iterations")
    else:
        logger.warning(f"No convergence after {max_iter} iterations (last step {step:.3g})")
    if not certified:
        logger.warning(
            f"Quadrature not resolved at order {rule.order}: refinement gap {gap:.3g} > {REFINEMENT_TOL:g}"
        )

    return SolveReport(
        solution=solution,
        iterations=iterations,
        final_step_norm=step,
        contraction_certificate=certificate,
        converged=converged,
        tol=tol,
        residual_norm=residual,
        damping_used=damping,
        within_hypothesis=within,
        quadrature_order=rule.order,
        refinement_gap=gap,
        quadrature_certified=certified,
    )


def sk_fixed_point(beta: float, h: float, rule: Optional[GaussianRule] = None) -> float:
    """
    Root of q = E tanh^2(beta sqrt(q) X + h) on [0, 1].

    This is the S = 1, D -> +infinity limit of the (p, q) system.
    """
    rule = _rule_or_default(rule)

    def gap(q: float) -> float:
        return expect_many(rule, lambda x: np.tanh(beta * math.sqrt(q) * x + h) ** 2) - q

    if gap(0.0) <= 0.0:
        return 0.0
    return brentq(gap, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
