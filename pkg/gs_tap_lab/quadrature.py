"""
Gauss-Hermite quadrature for expectations of a standard Gaussian X
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .config import DEFAULT_QUADRATURE_ORDER, MAX_QUADRATURE_ORDER
from .errors import IntegrandError, QuadratureError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianRule:
    """
    Nodes and probability weights for E[g(X)], X ~ N(0, 1).

    Weights already include the change of variables from the e^{-x^2}
    weight, so they are positive and sum to one.
    """
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return int(self.nodes.shape[0])


def build_rule(order: int = DEFAULT_QUADRATURE_ORDER) -> GaussianRule:
    """
    Build the order-point Gauss-Hermite rule in standard-Gaussian coordinates.

    The rule integrates polynomials of degree <= 2*order - 1 exactly.

    Args:
        order: Number of nodes, 1..MAX_QUADRATURE_ORDER (300)

    Returns:
        Immutable GaussianRule

    Raises:
        QuadratureError: order out of range or underflowing weights
    """
    if int(order) != order or order < 1:
        raise QuadratureError(f"quadrature order must be a positive integer, got {order!r}")
    if order > MAX_QUADRATURE_ORDER:
        raise QuadratureError(
            f"quadrature order {order} exceeds the cap {MAX_QUADRATURE_ORDER} (weights underflow)"
        )
    # probabilists' Hermite rule: weight e^{-x^2/2}, nodes already symmetrised
    nodes, weights = np.polynomial.hermite_e.hermegauss(int(order))
    weights = weights / math.sqrt(2.0 * math.pi)
    weights = weights / np.sum(weights)
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise QuadratureError(f"quadrature weights underflow at order {order}")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    logger.debug(f"Built Gauss-Hermite rule of order {order}")
    return GaussianRule(nodes=nodes, weights=weights)


@lru_cache(maxsize=None)
def cached_rule(order: int = DEFAULT_QUADRATURE_ORDER) -> GaussianRule:
    """Shared read-only rule of the given order, built once per process"""
    return build_rule(order)


def _folded_sum(rule: GaussianRule, values: np.ndarray) -> float:
    """
    Weighted sum pairing mirror nodes, so odd integrands cancel exactly.
    """
    n = rule.order
    half = n // 2
    left = values[:half]
    right = values[n - 1:n - 1 - half:-1] if half else values[:0]
    total = float(np.dot(rule.weights[:half], left + right))
    if n % 2:
        total += float(rule.weights[half] * values[half])
    return total


def _checked(values, rule: GaussianRule) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != rule.nodes.shape:
        raise IntegrandError(
            f"integrand returned shape {values.shape}, expected {rule.nodes.shape}"
        )
    if not np.all(np.isfinite(values)):
        bad = rule.nodes[~np.isfinite(values)]
        raise IntegrandError(f"integrand is not finite at node(s) {bad[:3].tolist()}")
    return values


def expect(rule: GaussianRule, g: Callable[[float], float]) -> float:
    """
    E[g(X)] for a scalar integrand.

    Args:
        rule: Quadrature rule
        g: Real function of one real

    Returns:
        sum_k weights_k * g(nodes_k)

    Raises:
        IntegrandError: g is not finite at some node
    """
    values = [g(float(x)) for x in rule.nodes]
    return _folded_sum(rule, _checked(values, rule))


def expect_many(rule: GaussianRule, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    E[g(X)] for an integrand that accepts the whole node array.

    Args:
        rule: Quadrature rule
        g: Vectorized integrand

    Returns:
        Weighted sum over nodes

    Raises:
        IntegrandError: g is not finite at some node
    """
    return _folded_sum(rule, _checked(g(rule.nodes), rule))
