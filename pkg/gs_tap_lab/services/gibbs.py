"""
Gibbs Service for GS-TAP Lab
Hamiltonian, seeded disorder, exact enumeration and heat-bath sampling
"""
import itertools
import logging
import math
import os
import struct
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ..config import (
    ENUMERATION_CAP,
    ENUMERATION_BLOCK_STATES,
    DEFAULT_SWEEPS,
    DEFAULT_BURN_IN,
    DEFAULT_REPLICAS,
    BATCH_COUNT,
    RANDOM_BLOCK_SWEEPS,
    STREAM_DISORDER,
    STREAM_CHAIN,
    DISORDER_MAGIC,
    DISORDER_FORMAT_VERSION,
)
from ..errors import (
    ConfigError,
    DisorderFormatError,
    EnumerationCapError,
    SizeMismatchError,
)
from ..models import (
    DisorderSample,
    GibbsStats,
    McmcSettings,
    ModelParams,
    OrderParams,
    OverlapMoments,
    SpinConfig,
    as_spins,
)
from ..single_site import single_site_moments, state_log_weights
from ..utils import atomic_write_bytes, make_rng

logger = logging.getLogger(__name__)

# magic, version u16, n u32, seed u64
_HEADER = struct.Struct("<4sHIQ")

__all__ = [
    "generate_disorder",
    "serialize_disorder",
    "deserialize_disorder",
    "save_disorder",
    "load_disorder",
    "hamiltonian",
    "enumerate_states",
    "mcmc_run",
    "overlap",
    "self_overlap",
    "single_site_moments",
]


# =============================================================================
# DISORDER
# =============================================================================

def generate_disorder(n: int, seed: int) -> DisorderSample:
    """
    Draw i.i.d. standard Gaussian couplings g_ij, i < j.

    The couplings come from the disorder stream of `seed`, so the same
    (n, seed) always reproduces the same sample bit for bit.

    Args:
        n: System size (>= 1)
        seed: 64-bit disorder seed

    Returns:
        DisorderSample
    """
    if int(n) != n or n < 1:
        raise ConfigError("n", f"must be a positive integer (got {n!r})")
    rng = make_rng(seed, STREAM_DISORDER)
    couplings = rng.standard_normal(n * (n - 1) // 2)
    couplings.setflags(write=False)
    return DisorderSample(n=int(n), couplings=couplings, seed=int(seed))


def serialize_disorder(disorder: DisorderSample) -> bytes:
    """Header (magic, version, n, seed) then little-endian float64 upper triangle"""
    header = _HEADER.pack(DISORDER_MAGIC, DISORDER_FORMAT_VERSION, disorder.n, disorder.seed)
    return header + np.ascontiguousarray(disorder.couplings, dtype="<f8").tobytes()


def deserialize_disorder(payload: bytes) -> DisorderSample:
    """
    Inverse of serialize_disorder.

    Raises:
        DisorderFormatError: bad magic, unknown version, truncated payload
            or non-finite couplings
    """
    if len(payload) < _HEADER.size:
        raise DisorderFormatError(f"payload of {len(payload)} bytes is shorter than the header")
    magic, version, n, seed = _HEADER.unpack_from(payload)
    if magic != DISORDER_MAGIC:
        raise DisorderFormatError(f"bad magic {magic!r}")
    if version != DISORDER_FORMAT_VERSION:
        raise DisorderFormatError(f"unsupported format version {version}")
    if n < 1:
        raise DisorderFormatError("n must be >= 1")
    count = n * (n - 1) // 2
    body = payload[_HEADER.size:]
    if len(body) != 8 * count:
        raise DisorderFormatError(f"expected {8 * count} coupling bytes for n={n}, got {len(body)}")
    couplings = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(couplings)):
        raise DisorderFormatError("couplings must be finite")
    couplings.setflags(write=False)
    return DisorderSample(n=n, couplings=couplings, seed=seed)


def save_disorder(disorder: DisorderSample, path: str):
    atomic_write_bytes(path, serialize_disorder(disorder))
    logger.info(f"Saved disorder n={disorder.n} seed={disorder.seed} to {path}")


def load_disorder(path: str) -> DisorderSample:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"disorder file not found: {path}")
    with open(path, "rb") as handle:
        return deserialize_disorder(handle.read())


# =============================================================================
# HAMILTONIAN AND OVERLAPS
# =============================================================================

def _checked_spins(config, n: int, S: Optional[int] = None) -> np.ndarray:
    spins = as_spins(config)
    if spins.shape != (n,):
        raise SizeMismatchError(f"configuration has {spins.shape[0]} spins, disorder has n={n}")
    if S is not None:
        SpinConfig(spins=spins).validate(S)
    return spins


def hamiltonian(config: SpinConfig, disorder: DisorderSample, params: ModelParams) -> float:
    """
    H(sigma) = (beta/sqrt(N)) sum_{i<j} g_ij s_i s_j + D sum s_i^2 + h sum s_i.

    The Gibbs weight is exp(H); beta lives inside H.
    """
    spins = _checked_spins(config, disorder.n, params.S)
    rows, cols = np.triu_indices(disorder.n, k=1)
    pair = float(np.dot(disorder.couplings, spins[rows] * spins[cols]))
    return (
        params.beta / math.sqrt(disorder.n) * pair
        + params.D * float(np.sum(spins ** 2))
        + params.h * float(np.sum(spins))
    )


def overlap(a: SpinConfig, b: SpinConfig) -> float:
    """R12 = (1/N) sum_i a_i b_i"""
    left, right = as_spins(a), as_spins(b)
    if left.shape != right.shape:
        raise SizeMismatchError(f"overlap of configurations of sizes {left.shape[0]} and {right.shape[0]}")
    if left.size == 0:
        raise SizeMismatchError("overlap of empty configurations")
    return float(np.dot(left, right) / left.size)


def self_overlap(a: SpinConfig) -> float:
    """R11 = (1/N) sum_i a_i^2"""
    return overlap(a, a)


# =============================================================================
# EXACT ENUMERATION
# =============================================================================

def _inner_width(n: int, n_states: int) -> int:
    width = 0
    while width < n and n_states ** (width + 1) <= ENUMERATION_BLOCK_STATES:
        width += 1
    return max(width, 1)


def enumerate_states(
    disorder: DisorderSample,
    params: ModelParams,
    cap: int = ENUMERATION_CAP,
) -> GibbsStats:
    """
    Exact Gibbs averages by summation over all (2S+1)^n states.

    States are visited in blocks sharing their leading spins; each block is
    reduced with its own max-shift and merged into a running log-space total.
    Pair and square correlations are accumulated in the same pass, so the
    replica moments need no second enumeration.

    Args:
        disorder: Coupling sample
        params: Model parameters
        cap: Largest admissible state count

    Returns:
        GibbsStats with mode "exact", log Z and n x n correlation matrices

    Raises:
        EnumerationCapError: (2S+1)^n exceeds cap
    """
    n = disorder.n
    spin_values = params.spin_values
    n_states = params.n_states
    total = n_states ** n
    if total > cap:
        raise EnumerationCapError(
            f"{n_states}^{n} = {total} states exceeds the enumeration cap {cap}; use --mode mcmc"
        )

    coupling_matrix = disorder.matrix * (params.beta / math.sqrt(n))
    width = _inner_width(n, n_states)
    lead = n - width
    inner = np.array(list(itertools.product(spin_values, repeat=width)), dtype=np.float64)
    block = np.empty((inner.shape[0], n), dtype=np.float64)
    block[:, lead:] = inner

    shift = -math.inf
    z = 0.0
    first = np.zeros(n)
    second = np.zeros(n)
    pair = np.zeros((n, n))
    square = np.zeros((n, n))
    block_logs = []

    for prefix in itertools.product(spin_values, repeat=lead):
        block[:, :lead] = prefix
        squares = block ** 2
        energy = (
            0.5 * np.einsum("ki,ki->k", block @ coupling_matrix, block)
            + params.D * squares.sum(axis=1)
            + params.h * block.sum(axis=1)
        )
        block_max = float(np.max(energy))
        weights = np.exp(energy - block_max)
        block_z = float(np.sum(weights))
        block_logs.append(block_max + math.log(block_z))

        if block_max > shift:
            scale = math.exp(shift - block_max) if math.isfinite(shift) else 0.0
            z *= scale
            first *= scale
            second *= scale
            pair *= scale
            square *= scale
            shift = block_max
            factor = 1.0
        else:
            factor = math.exp(block_max - shift)

        weighted = weights * factor
        z += float(np.sum(weighted))
        first += weighted @ block
        second += weighted @ squares
        pair += block.T @ (weighted[:, None] * block)
        square += squares.T @ (weighted[:, None] * squares)

    log_partition = shift + math.log(z)
    check = float(logsumexp(block_logs))
    if abs(check - log_partition) > 1e-10 * max(1.0, abs(log_partition)):
        logger.warning(f"log Z mismatch between block and running totals: {check} vs {log_partition}")

    magnetizations = np.clip(first / z, -params.S, params.S)
    second_moments = np.clip(second / z, 0.0, params.box_size)
    second_moments = np.maximum(second_moments, magnetizations ** 2)
    logger.debug(f"Enumerated {total} states for n={n} (log Z = {log_partition:.12g})")

    return GibbsStats(
        magnetizations=magnetizations,
        second_moments=second_moments,
        log_partition=log_partition,
        mode="exact",
        pair_correlations=pair / z,
        square_correlations=square / z,
        n_samples=total,
    )


# =============================================================================
# HEAT-BATH MCMC
# =============================================================================

def _batch_estimates(batch_means: np.ndarray):
    """Mean and standard error over the leading (replica x batch) axis"""
    count = batch_means.shape[0]
    mean = batch_means.mean(axis=0)
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, batch_means.std(axis=0, ddof=1) / math.sqrt(count)


def mcmc_run(
    disorder: DisorderSample,
    params: ModelParams,
    sweeps: int = DEFAULT_SWEEPS,
    burn_in: int = DEFAULT_BURN_IN,
    replicas: int = DEFAULT_REPLICAS,
    rng_seed: int = 0,
    order_params: Optional[OrderParams] = None,
) -> GibbsStats:
    """
    Estimate Gibbs averages with single-site heat-bath sweeps.

    Each site is redrawn from its exact conditional over the 2S+1 states.
    A sweep visits sites 0..n-1 in order. Replica r draws from its own
    stream make_rng(rng_seed, STREAM_CHAIN, r). Standard errors are batch
    means over BATCH_COUNT batches per replica.

    Args:
        disorder: Coupling sample
        params: Model parameters
        sweeps: Measured sweeps after burn-in
        burn_in: Discarded sweeps
        replicas: Independent chains on the same disorder
        rng_seed: Chain seed
        order_params: When given, overlap moments about (p, q) are estimated
            from replica pairs (needs replicas >= 2)

    Returns:
        GibbsStats with mode "mcmc"
    """
    McmcSettings(sweeps=sweeps, burn_in=burn_in, replicas=replicas).validate(overlaps=order_params is not None)

    n = disorder.n
    states = params.spin_values
    coupling_matrix = disorder.matrix * (params.beta / math.sqrt(n))
    rngs = [make_rng(rng_seed, STREAM_CHAIN, r) for r in range(replicas)]
    spins = np.stack([rng.choice(states, size=n) for rng in rngs])

    batches = min(BATCH_COUNT, sweeps)
    sum_m = np.zeros((replicas, batches, n))
    sum_p = np.zeros((replicas, batches, n))
    batch_sizes = np.zeros(batches)
    track_overlaps = order_params is not None
    pair_rows, pair_cols = np.triu_indices(replicas, k=1)
    sum_r12 = np.zeros(batches)
    sum_r11 = np.zeros(batches)

    uniforms = None
    for t in range(burn_in + sweeps):
        offset = t % RANDOM_BLOCK_SWEEPS
        if offset == 0:
            uniforms = np.stack([rng.random((RANDOM_BLOCK_SWEEPS, n)) for rng in rngs])
        for i in range(n):
            fields = spins @ coupling_matrix[:, i] + params.h
            log_w = state_log_weights(fields, params.D, params.S)
            log_w -= log_w.max(axis=1, keepdims=True)
            cumulative = np.cumsum(np.exp(log_w), axis=1)
            target = uniforms[:, offset, i] * cumulative[:, -1]
            picks = np.minimum((cumulative < target[:, None]).sum(axis=1), len(states) - 1)
            spins[:, i] = states[picks]

        measured = t - burn_in
        if measured < 0:
            continue
        b = measured * batches // sweeps
        sum_m[:, b] += spins
        sum_p[:, b] += spins ** 2
        batch_sizes[b] += 1
        if track_overlaps:
            gram = spins @ spins.T / n
            sum_r12[b] += np.mean((gram[pair_rows, pair_cols] - order_params.q) ** 2)
            sum_r11[b] += np.mean((np.diag(gram) - order_params.p) ** 2)

    m_batches = (sum_m / batch_sizes[None, :, None]).reshape(-1, n)
    p_batches = (sum_p / batch_sizes[None, :, None]).reshape(-1, n)
    magnetizations, m_se = _batch_estimates(m_batches)
    second_moments, p_se = _batch_estimates(p_batches)

    moments = None
    if track_overlaps:
        r12, r12_se = _batch_estimates(sum_r12 / batch_sizes)
        r11, r11_se = _batch_estimates(sum_r11 / batch_sizes)
        moments = OverlapMoments(
            r12_sq=float(r12), r11_sq=float(r11),
            p=order_params.p, q=order_params.q,
            r12_sq_std_error=float(r12_se), r11_sq_std_error=float(r11_se),
        )

    logger.debug(f"Heat-bath run n={n} sweeps={sweeps} burn_in={burn_in} replicas={replicas}")
    return GibbsStats(
        magnetizations=magnetizations,
        second_moments=second_moments,
        log_partition=math.nan,
        mode="mcmc",
        overlap_moments=moments,
        mcmc_std_errors={"magnetizations": m_se, "second_moments": p_se},
        n_samples=sweeps,
        replicas=replicas,
    )
