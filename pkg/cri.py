"""
Expected conditional collision resolution interval (CRI) length.

L_n is the expected number of slots needed to resolve n initially colliding
users on a K-collision channel with binary splitting. Three routes are
provided for the SIC variant (recursion, alternating closed form, positive
series) plus the recursion and series without SIC.
"""

import logging
import math
import sys
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import bdtrc

from errors import InputValidationError, NonConvergenceError, PrecisionLossError
from numerics import BigRational, ln_binomial_pmf_row, ln_binomial_row

logger = logging.getLogger(__name__)

EPS = sys.float_info.epsilon
SERIES_MAX_TERMS = 10_000
SERIES_REL_TOL = 1e-12
SERIES_QUIET_TERMS = 3
CLOSED_FORM_REL_TOL = 1e-6
SPLIT_SUM_TOL = 1e-12


class CriMethod(str, Enum):
    """How a CriValue was computed."""
    RECURSIVE = "Recursive"
    CLOSED_FORM = "ClosedForm"
    SERIES = "Series"
    NO_SIC_RECURSIVE = "NoSicRecursive"
    NO_SIC_SERIES = "NoSicSeries"


# Method names accepted by the dispatcher and the CLI.
METHOD_CHOICES = ("recursive", "closed", "series", "auto")


@dataclass(frozen=True)
class CriValue:
    """Expected conditional CRI length for n initial users."""
    n: int
    value: float
    method: CriMethod
    abs_error_bound: float


class ProtocolConfig(BaseModel):
    """Channel and splitting parameters shared by the analysis and the simulator."""
    model_config = ConfigDict(frozen=True)

    K: int = Field(ge=1, description="Packets decodable per slot (MPR capability)")
    d: int = Field(default=2, ge=2, description="Splitting factor")
    split_probs: Optional[list[float]] = None
    sic: bool = True

    @model_validator(mode="before")
    @classmethod
    def _fair_split_default(cls, data):
        if isinstance(data, dict) and data.get("split_probs") is None:
            d = data.get("d", 2)
            if isinstance(d, int) and d >= 2:
                data = {**data, "split_probs": [1.0 / d] * d}
        return data

    @model_validator(mode="after")
    def _check_split(self) -> "ProtocolConfig":
        probs = self.split_probs
        if probs is None:
            raise ValueError("split_probs could not be derived from d")
        if len(probs) != self.d:
            raise ValueError(f"split_probs has {len(probs)} entries, expected d={self.d}")
        if any(not (0.0 < q < 1.0) for q in probs):
            raise ValueError("split probabilities must lie strictly inside (0, 1)")
        if abs(math.fsum(probs) - 1.0) > SPLIT_SUM_TOL:
            raise ValueError(f"split probabilities sum to {math.fsum(probs)!r}, not 1")
        return self

    @property
    def p(self) -> float:
        """Probability of joining group 0."""
        return self.split_probs[0]

    @property
    def fair(self) -> bool:
        return all(abs(q - 1.0 / self.d) <= SPLIT_SUM_TOL for q in self.split_probs)


# ============== Validation ==============

def _check_args(n: int, K: int, p: float = 0.5) -> None:
    if n < 0:
        raise InputValidationError(f"n must be non-negative, got {n}")
    if K < 1:
        raise InputValidationError(f"K must be at least 1, got {K}")
    if not (0.0 < p < 1.0):
        raise InputValidationError(f"split probability must lie in (0, 1), got {p}")


def conditional_throughput(n: int, K: int, L_n: float) -> float:
    """T_n = n / (K L_n)."""
    if n < 0 or K < 1:
        raise InputValidationError(f"need n >= 0 and K >= 1, got n={n}, K={K}")
    if L_n < 1.0:
        raise InputValidationError(f"CRI length is at least one slot, got {L_n}")
    return n / (K * L_n)


# ============== Recursion ==============

# (K, p, sic) -> L_0..L_N, extended to the largest n requested so far
_TABLES: dict[tuple[int, float, bool], np.ndarray] = {}


def _recursive_table(n_max: int, K: int, p: float, sic: bool) -> np.ndarray:
    """
    L_0..L_{n_max} by the expectation recursion, bottom-up.

    With w_j = C(n,j) p^j q^(n-j), splitting n into (j, n-j) gives
        L_n (1 - p^n - q^n) = (p^n + q^n) L_0 + sum_{j=1}^{n-1} (w_j + w_{n-j}) L_j
    plus one root slot on the right when SIC is off.

    One table per (K, p, sic) is shared by every caller. It is extended
    from its current end, at least doubling, so a loop over n stays O(n^2).
    """
    key = (K, p, sic)
    table = _TABLES.get(key)
    if table is not None and len(table) > n_max:
        return table
    start = 0 if table is None else len(table)
    size = max(n_max + 1, 2 * start)
    grown = np.ones(size)
    if table is not None:
        grown[:start] = table
    log_p, log_q = math.log(p), math.log1p(-p)
    for n in range(max(K + 1, start), size):
        w = np.exp(ln_binomial_pmf_row(n, p))
        both = w + w[::-1]
        rhs = both[0] * grown[0] + float(np.dot(both[1:n], grown[1:n]))
        if not sic:
            rhs += 1.0
        stay = -math.expm1(n * log_q) - math.exp(n * log_p)
        grown[n] = rhs / stay
    grown.setflags(write=False)
    _TABLES[key] = grown
    logger.debug("recursion table grown to n=%d for K=%d p=%g sic=%s", size - 1, K, p, sic)
    return grown


def _recursion_error(n: int, value: float) -> float:
    return value * (n + 1) * 64 * EPS


def cri_table(n_max: int, K: int, p: float = 0.5, sic: bool = True) -> tuple[float, ...]:
    """Read-only table L_0..L_{n_max} (float recursion, any p)."""
    _check_args(n_max, K, p)
    return tuple(float(v) for v in _recursive_table(n_max, K, float(p), bool(sic))[: n_max + 1])


def expected_cri_recursive(n: int, K: int, p: float = 0.5) -> CriValue:
    """L_n with SIC by the expectation recursion, for any split probability."""
    _check_args(n, K, p)
    if n <= K:
        return CriValue(n, 1.0, CriMethod.RECURSIVE, 0.0)
    value = float(_recursive_table(n, K, float(p), True)[n])
    return CriValue(n, value, CriMethod.RECURSIVE, _recursion_error(n, value))


# ============== Closed form ==============

def _closed_form_fraction_parts(n: int, K: int) -> tuple[int, int]:
    """
    Numerator and denominator (not reduced) of the fair-split closed form
        L_n = 1 - C(n,K) sum_{i=1}^{n-K} i (-1)^i C(n-K,i) 2^(j-1) / (j (2^(j-1) - 1)),
    with j = i + K, over a common integer denominator.
    """
    if n <= K:
        return 1, 1
    top = n - K
    denominators = [(i + K) * ((1 << (i + K - 1)) - 1) for i in range(1, top + 1)]
    common = 1
    for den in denominators:
        common = math.lcm(common, den)
    acc = 0
    for i, den in enumerate(denominators, start=1):
        term = i * math.comb(top, i) << (i + K - 1)
        if i % 2:
            term = -term
        acc += term * (common // den)
    return common - math.comb(n, K) * acc, common


def expected_cri_exact(n: int, K: int) -> BigRational:
    """Exact rational L_n for fair splitting with SIC."""
    _check_args(n, K)
    num, den = _closed_form_fraction_parts(n, K)
    return Fraction(num, den)


@lru_cache(maxsize=32)
def _exact_table(n_max: int, K: int) -> tuple[float, ...]:
    values = []
    for n in range(n_max + 1):
        num, den = _closed_form_fraction_parts(n, K)
        values.append(num / den)
    logger.debug("exact closed-form table n_max=%d K=%d", n_max, K)
    return tuple(values)


def exact_cri_table(n_max: int, K: int) -> tuple[float, ...]:
    """Correctly rounded L_0..L_{n_max} from the exact closed form (fair split, SIC)."""
    _check_args(n_max, K)
    return _exact_table(n_max, K)


def _closed_form_float(n: int, K: int, p: float) -> tuple[float, float]:
    top = n - K
    i = np.arange(1, top + 1, dtype=float)
    j = i + K
    den = -np.expm1(j * math.log1p(-p)) - np.exp(j * math.log(p))
    log_mag = np.log(i) + ln_binomial_row(top)[1:] - np.log(j) - np.log(den)
    log_scale = float(ln_binomial_row(n)[K])
    peak = float(np.max(log_mag)) + log_scale
    if peak > 700.0:
        raise PrecisionLossError(f"closed form terms overflow at n={n}, p={p}")
    signs = np.where(i.astype(int) % 2 == 1, -1.0, 1.0)
    terms = signs * np.exp(log_mag + log_scale)
    value = 1.0 - math.fsum(terms)
    magnitude = float(np.sum(np.abs(terms)))
    error = (4.0 + abs(peak)) * EPS * magnitude + EPS * abs(value)
    return value, error


def expected_cri_closed_form(n: int, K: int, p: float = 0.5) -> CriValue:
    """
    L_n with SIC by the alternating closed form.

    Fair splitting is evaluated in exact rational arithmetic; any other p uses
    a float sum whose certified error must stay below 1e-6 relative.
    """
    _check_args(n, K, p)
    if n <= K:
        return CriValue(n, 1.0, CriMethod.CLOSED_FORM, 0.0)
    if p == 0.5:
        num, den = _closed_form_fraction_parts(n, K)
        value = num / den
        return CriValue(n, value, CriMethod.CLOSED_FORM, EPS * value)

    value, error = _closed_form_float(n, K, float(p))
    if not math.isfinite(value) or error > CLOSED_FORM_REL_TOL * abs(value):
        raise PrecisionLossError(
            f"closed form for n={n}, K={K}, p={p} loses precision "
            f"(error bound {error:.3g} on value {value:.6g})"
        )
    return CriValue(n, value, CriMethod.CLOSED_FORM, error)


# ============== Series ==============

def _series_sum(n: int, K: int) -> tuple[float, float]:
    """
    sum_{m>=0} 2^m P{Binomial(n, 2^-m) > K}, all terms positive.

    The m = 0 term is exactly 1 for n > K.
    """
    terms = [1.0]
    total = 1.0
    quiet = 0
    for m in range(1, SERIES_MAX_TERMS):
        term = math.ldexp(float(bdtrc(K, n, math.ldexp(1.0, -m))), m)
        terms.append(term)
        total += term
        if math.ldexp(1.0, m) > n and term < SERIES_REL_TOL * total:
            quiet += 1
            if quiet >= SERIES_QUIET_TERMS:
                total = math.fsum(terms)
                error = 2.0 * term + len(terms) * 8 * EPS * total
                return total, error
        else:
            quiet = 0
    raise NonConvergenceError(f"series for n={n}, K={K} hit {SERIES_MAX_TERMS} terms")


def expected_cri_series(n: int, K: int) -> CriValue:
    """L_n with SIC for fair splitting from the positive series (n > K)."""
    _check_args(n, K)
    if n <= K:
        raise InputValidationError(f"series route needs n > K, got n={n}, K={K}")
    total, error = _series_sum(n, K)
    return CriValue(n, 1.0 + total, CriMethod.SERIES, error)


# ============== Without SIC ==============

def expected_cri_no_sic(n: int, K: int, p: float = 0.5, method: str = "recursive") -> CriValue:
    """
    L*_n when every tree node costs a slot (no interference cancellation).

    method "recursive" works for any p; "series" needs fair splitting and
    evaluates L*_n = 1 + 2 sum_m 2^m P{Binomial(n, 2^-m) > K}.
    """
    _check_args(n, K, p)
    if method not in ("recursive", "series"):
        raise InputValidationError(f"unknown no-SIC method {method!r}")
    kind = CriMethod.NO_SIC_SERIES if method == "series" else CriMethod.NO_SIC_RECURSIVE
    if n <= K:
        return CriValue(n, 1.0, kind, 0.0)
    if method == "series":
        if p != 0.5:
            raise InputValidationError("no-SIC series is only available for fair splitting")
        total, error = _series_sum(n, K)
        return CriValue(n, 1.0 + 2.0 * total, kind, 2.0 * error)
    value = float(_recursive_table(n, K, float(p), False)[n])
    return CriValue(n, value, kind, _recursion_error(n, value))


# ============== Dispatch ==============

def expected_cri(n: int, K: int, p: float = 0.5, sic: bool = True, method: str = "auto") -> CriValue:
    """
    Pick a route for L_n (or L*_n when sic is False).

    "auto" uses the series for fair splitting with n > K and the recursion
    otherwise. "closed" exists only with SIC.
    """
    if method not in METHOD_CHOICES:
        raise InputValidationError(f"method must be one of {METHOD_CHOICES}, got {method!r}")
    _check_args(n, K, p)
    if method == "auto":
        method = "series" if (p == 0.5 and n > K) else "recursive"

    if not sic:
        if method == "closed":
            raise InputValidationError("the closed form exists only with SIC")
        if method == "series" and n <= K:
            return CriValue(n, 1.0, CriMethod.NO_SIC_SERIES, 0.0)
        return expected_cri_no_sic(n, K, p, method=method)

    if method == "recursive":
        return expected_cri_recursive(n, K, p)
    if method == "closed":
        return expected_cri_closed_form(n, K, p)
    if p != 0.5:
        raise InputValidationError("the series route assumes fair splitting (p = 0.5)")
    if n <= K:
        return CriValue(n, 1.0, CriMethod.SERIES, 0.0)
    return expected_cri_series(n, K)
