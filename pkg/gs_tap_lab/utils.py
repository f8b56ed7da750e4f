"""
Utility functions for GS-TAP Lab
"""
import math
import os
import tempfile
from typing import Sequence, Tuple

import numpy as np

from .config import CSV_SIGNIFICANT_DIGITS


def derive_seed(master_seed: int, index: int) -> int:
    """
    Derive the seed of disorder sample `index` from a master seed.

    The rule is seed_i = first 64-bit word of
    SeedSequence(master_seed, spawn_key=(index,)).generate_state, so every
    sample's seed depends only on (master_seed, index) and never on how the
    work is scheduled.

    Args:
        master_seed: Run-level seed
        index: Disorder-sample index

    Returns:
        64-bit unsigned seed
    """
    sequence = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """
    Counter-based generator for one (seed, stream, index) triple.

    Args:
        seed: Disorder or chain seed
        stream: Purpose identifier (see STREAM_* in config)
        index: Replica or worker index within the stream

    Returns:
        numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(sequence))


def mean_and_std_error(values: Sequence[float]) -> Tuple[float, float]:
    """
    Sample mean and standard error of the mean.

    Args:
        values: Independent estimates

    Returns:
        (mean, std_error); std_error is 0 for a single value
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(data))
    if data.size == 1:
        return mean, 0.0
    return mean, float(np.std(data, ddof=1) / math.sqrt(data.size))


def format_float(value: float) -> str:
    """Canonical CSV rendering with 12 significant digits"""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{float(value):.{CSV_SIGNIFICANT_DIGITS}g}"


def atomic_write_text(path: str, text: str):
    """
    Write a text file atomically (temp file in the same directory, then rename).

    Args:
        path: Destination path
        text: File contents
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_bytes(path: str, payload: bytes):
    """Binary counterpart of atomic_write_text"""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
