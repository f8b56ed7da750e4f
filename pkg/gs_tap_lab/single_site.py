"""
Single-spin Gibbs kernel shared by the fixed-point integrands, the TAP
right-hand sides and the heat-bath sampler.

For one spin s in {-S, ..., S} with weight exp(field * s + crystal * s^2),
the states +-gamma contribute 2 ch(gamma*field) exp(gamma^2 crystal) against
the empty state's 1. Everything below is a moment of this distribution.
"""
from typing import Tuple

import numpy as np

from .config import EXP_GUARD_THRESHOLD


def state_weights(field, crystal, S: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Unnormalized weights of the empty state and the states +-gamma.

    2 ch(a) e^b is split as e^{a+b} + e^{-a+b}. When any exponent exceeds
    EXP_GUARD_THRESHOLD the largest one is factored out of every weight.

    Args:
        field: Linear coefficient (array or scalar)
        crystal: Quadratic coefficient (array or scalar, broadcast with field)
        S: Maximum spin magnitude

    Returns:
        (w_zero, w_up, w_down); w_up/w_down have a trailing axis of length S
    """
    field, crystal = np.broadcast_arrays(
        np.asarray(field, dtype=np.float64), np.asarray(crystal, dtype=np.float64)
    )
    gammas = np.arange(1, S + 1, dtype=np.float64)
    linear = field[..., None] * gammas
    quadratic = crystal[..., None] * gammas ** 2
    up = quadratic + linear
    down = quadratic - linear
    top = np.maximum(up.max(axis=-1), down.max(axis=-1))
    shift = np.where(top > EXP_GUARD_THRESHOLD, top, 0.0)
    w_up = np.exp(up - shift[..., None])
    w_down = np.exp(down - shift[..., None])
    w_zero = np.exp(-shift)
    return w_zero, w_up, w_down


def moments(field, crystal, S: int, powers=(1, 2)) -> Tuple[np.ndarray, ...]:
    """
    Moments E[s^k] of the single-spin distribution for each k in `powers`.

    Args:
        field: Linear coefficient
        crystal: Quadratic coefficient
        S: Maximum spin magnitude
        powers: Non-negative integer powers; 0 gives the empty-state probability

    Returns:
        Tuple of arrays, one per requested power
    """
    w_zero, w_up, w_down = state_weights(field, crystal, S)
    partition = w_zero + np.sum(w_up + w_down, axis=-1)
    gammas = np.arange(1, S + 1, dtype=np.float64)
    results = []
    for k in powers:
        if k == 0:
            results.append(w_zero / partition)
            continue
        signed = w_up - w_down if k % 2 else w_up + w_down
        results.append(np.sum(gammas ** k * signed, axis=-1) / partition)
    return tuple(results)


def single_site_moments(field, crystal, S: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (<s>, <s^2>) for one spin with weight exp(field * s + crystal * s^2).

    <s>   = sum_g g 2sh(g field) e^{g^2 crystal} / (1 + sum_g 2ch(g field) e^{g^2 crystal})
    <s^2> = sum_g g^2 2ch(g field) e^{g^2 crystal} / (same denominator)
    """
    return moments(field, crystal, S, powers=(1, 2))


def state_log_weights(field, crystal, S: int) -> np.ndarray:
    """Log-weights of the 2S+1 states -S..S along a trailing axis"""
    field = np.asarray(field, dtype=np.float64)
    crystal = np.asarray(crystal, dtype=np.float64)
    states = np.arange(-S, S + 1, dtype=np.float64)
    return field[..., None] * states + crystal[..., None] * states ** 2
