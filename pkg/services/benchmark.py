"""
Timing harness: linear selective scan against quadratic softmax attention.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from services.ssm import reference_attention, scan_forward

logger = logging.getLogger(__name__)


@dataclass
class BenchResult:
    table: pd.DataFrame        # length, scan_seconds, attention_seconds (NaN where skipped)
    scan_slope: float
    attention_slope: float


def median_time(fn: Callable[[], object], repeats: int) -> float:
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def loglog_slope(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    """Least-squares growth exponent of time against length."""
    lengths, seconds = np.asarray(lengths, dtype=float), np.asarray(seconds, dtype=float)
    keep = np.isfinite(seconds) & (seconds > 0)
    if keep.sum() < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(lengths[keep]), np.log(seconds[keep]), 1)
    return float(slope)


def scan_inputs(length: int, d_inner: int, d_state: int, rng: np.random.Generator):
    u = rng.standard_normal((1, d_inner, length))
    delta = rng.uniform(1e-3, 1e-1, size=(1, length, d_inner))
    A = -np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
    B = rng.standard_normal((1, length, d_state))
    C = rng.standard_normal((1, length, d_state))
    D = np.ones(d_inner)
    return u, delta, A, B, C, D


def bench_scan(lengths: Sequence[int], d_inner: int = 16, d_state: int = 16, repeats: int = 9,
               attention_max_length: Optional[int] = 16384, seed: int = 0) -> BenchResult:
    """Median wall time per length for both kernels and their fitted exponents.

    Attention is skipped above ``attention_max_length`` (None times every length).
    """
    rng = np.random.default_rng(seed)
    lengths = sorted(int(n) for n in lengths)
    warm = scan_inputs(min(lengths), d_inner, d_state, rng)
    scan_forward(*warm)  # compile before timing

    rows = []
    for length in lengths:
        inputs = scan_inputs(length, d_inner, d_state, rng)
        scan_seconds = median_time(lambda: scan_forward(*inputs), repeats)
        attention_seconds = float('nan')
        if attention_max_length is None or length <= attention_max_length:
            attention_seconds = median_time(lambda: reference_attention(inputs[0]), repeats)
        rows.append({'length': length, 'scan_seconds': scan_seconds, 'attention_seconds': attention_seconds})
        logger.info(f"length={length} scan={scan_seconds:.6f}s attention={attention_seconds:.6f}s")

    table = pd.DataFrame(rows, columns=['length', 'scan_seconds', 'attention_seconds'])
    return BenchResult(
        table=table,
        scan_slope=loglog_slope(table['length'], table['scan_seconds']),
        attention_slope=loglog_slope(table['length'], table['attention_seconds']),
    )
