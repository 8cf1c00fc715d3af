"""
Linear bounds beta_m * n <= L_n <= alpha_m * n for n >= m.

The coefficients are the sup and inf of a ratio built from the first m exact
values of L_n, searched over a finite horizon n in [m, n_eval].
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from cri import cri_table, exact_cri_table
from errors import InputValidationError

logger = logging.getLogger(__name__)

PLATEAU_TOL = 1e-7

# Induction anchor m and search horizon n_eval per K used for the reference tables.
TABLE_ANCHORS: dict[int, tuple[int, int]] = {
    1: (50, 100),
    2: (100, 200),
    4: (200, 400),
    8: (400, 800),
    16: (400, 800),
    32: (400, 800),
    64: (500, 1000),
}


@dataclass(frozen=True)
class BoundsResult:
    """Bound coefficients on L_n and the throughput bounds they induce."""
    K: int
    m: int
    n_eval: int
    alpha_m: float
    beta_m: float
    A_m: float
    B_m: float
    converged: bool
    sic: bool = True


def default_anchor(K: int) -> tuple[int, int]:
    """(m, n_eval) from the reference table, or (8K, 16K) for other K."""
    return TABLE_ANCHORS.get(K, (max(8 * K, K + 1), max(16 * K, K + 2)))


def _check_anchor(m: int, K: int) -> None:
    if K < 1:
        raise InputValidationError(f"K must be at least 1, got {K}")
    if m < K + 1:
        raise InputValidationError(f"anchor m must be at least K+1={K + 1}, got {m}")


def lower_table(n_max: int, K: int, sic: bool = True) -> tuple[float, ...]:
    """L_0..L_{n_max}: exact closed form with SIC, recursion without."""
    if sic:
        return exact_cri_table(n_max, K)
    return cri_table(n_max, K, 0.5, sic=False)


def ratio_curve(m: int, K: int, n_values: Sequence[int], sic: bool = True) -> np.ndarray:
    """
    R(n) = sum_{i<m} C(n,i) L_i / sum_{i<m} C(n,i) i for each n.

    Binomial weights are taken in log space and normalised by their maximum
    so every summand is positive and at most one.
    """
    _check_anchor(m, K)
    n = np.asarray(n_values, dtype=float)
    if np.any(n < m - 1):
        raise InputValidationError(f"ratio needs n >= m-1={m - 1}")
    table = np.asarray(lower_table(m - 1, K, sic))
    i = np.arange(m, dtype=float)
    log_w = gammaln(n[:, None] + 1.0) - gammaln(i[None, :] + 1.0) - gammaln(n[:, None] - i[None, :] + 1.0)
    w = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    return (w @ table) / (w @ i)


def ratio_sequence(m: int, K: int, n: int, sic: bool = True) -> float:
    """Single value R(n) for n >= m."""
    if n < m:
        raise InputValidationError(f"ratio is defined for n >= m, got n={n}, m={m}")
    return float(ratio_curve(m, K, [n], sic)[0])


def compute_bounds(m: int, K: int, n_eval: Optional[int] = None, sic: bool = True) -> BoundsResult:
    """alpha_m = max and beta_m = min of R(n) over n in [m, n_eval]."""
    _check_anchor(m, K)
    if n_eval is None:
        n_eval = 2 * m
    if n_eval < m:
        raise InputValidationError(f"n_eval must be at least m={m}, got {n_eval}")

    curve = ratio_curve(m, K, range(m - 1, n_eval + 1), sic)
    search = curve[1:]
    alpha, beta = float(search.max()), float(search.min())
    step = abs(float(curve[-1] - curve[-2]))
    converged = step < PLATEAU_TOL
    if not converged:
        logger.warning(
            "ratio has not plateaued for K=%d m=%d at n=%d (last step %.3g)", K, m, n_eval, step
        )
    return BoundsResult(
        K=K,
        m=m,
        n_eval=n_eval,
        alpha_m=alpha,
        beta_m=beta,
        A_m=1.0 / (K * alpha),
        B_m=1.0 / (K * beta),
        converged=converged,
        sic=sic,
    )


def bounds_for(K: int, sic: bool = True) -> BoundsResult:
    """Bounds at the reference anchor for K."""
    m, n_eval = default_anchor(K)
    return compute_bounds(m, K, n_eval, sic)
