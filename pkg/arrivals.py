"""
Stability bounds under Poisson arrivals.

Gated access reads the bounds straight off the asymptotic oscillation.
Windowed access maximises z / f(x, m, z) over the window load z = lambda*Delta,
where f(x, m, z) bounds the Poisson mixture of L_n using the first m exact
values and the linear coefficient x beyond them.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln
from scipy.stats import poisson

from asymptotics import LN2, oscillation_amplitude
from bounds import compute_bounds, default_anchor, lower_table
from cri import cri_table
from errors import HorizonError, InputValidationError
from numerics import ln_poisson_weights

logger = logging.getLogger(__name__)

GRID_STEP = 0.25
HORIZON_FACTOR = 8
REFINE_TOL = 1e-8
# lambda_U below lambda_S by less than this share of lambda_S is round-off
ROUNDOFF_GAP = 1e-9
POISSON_TAIL = 1e-12
GRID_CHUNK = 512


class Access(str, Enum):
    GATED = "Gated"
    WINDOWED = "Windowed"


@dataclass(frozen=True)
class StabilityReport:
    """Arrival-intensity bounds, raw (per slot) and divided by K."""
    access: Access
    K: int
    lambda_S: float
    lambda_U: float
    lambda_S_norm: float
    lambda_U_norm: float
    argmax_z: Optional[float] = None
    m_used: Optional[int] = None
    sic: bool = True


@dataclass(frozen=True)
class WindowedModel:
    """Inputs of f(x, m, z): exact L_0..L_m and the two linear coefficients."""
    K: int
    m: int
    coeff_upper: float
    coeff_lower: float
    L_table: tuple[float, ...]
    sic: bool = True


@dataclass(frozen=True)
class SensitivityPoint:
    z: float
    F: float
    F_no_sic: float


def _report(access: Access, K: int, lam_s: float, lam_u: float, **extra) -> StabilityReport:
    return StabilityReport(
        access=access,
        K=K,
        lambda_S=lam_s,
        lambda_U=lam_u,
        lambda_S_norm=lam_s / K,
        lambda_U_norm=lam_u / K,
        **extra,
    )


# ============== Gated access ==============

def gated_bounds(K: int) -> StabilityReport:
    """lambda_S = K ln 2 / (1 + a), lambda_U = K ln 2 / (1 - a), a = 2K|B(K,1)|."""
    if K < 1:
        raise InputValidationError(f"K must be at least 1, got {K}")
    amplitude = oscillation_amplitude(K)
    if amplitude >= 1.0:
        raise HorizonError(f"oscillation amplitude {amplitude:.4f} >= 1 for K={K}")
    return _report(Access.GATED, K, K * LN2 / (1.0 + amplitude), K * LN2 / (1.0 - amplitude))


# ============== Windowed access ==============

def _poisson_terms(x: float, L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Rows of (L_i - x i) z^i e^-z / i! for positive loads z."""
    i = np.arange(len(L), dtype=float)
    log_w = i[None, :] * np.log(z)[:, None] - z[:, None] - gammaln(i + 1.0)[None, :]
    return (L - x * i)[None, :] * np.exp(log_w)


def _f_values(x: float, L: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.empty(len(z))
    for start in range(0, len(z), GRID_CHUNK):
        zc = z[start:start + GRID_CHUNK]
        terms = _poisson_terms(x, L, zc)
        order = np.argsort(np.abs(terms), axis=1)
        out[start:start + GRID_CHUNK] = x * zc + np.take_along_axis(terms, order, axis=1).sum(axis=1)
    return out


def windowed_f(x: float, k: int, z: float, L_table: Sequence[float]) -> float:
    """
    f(x, k, z) = x z + sum_{i=0}^{k} (L_i - x i) z^i e^-z / i!.

    Poisson weights are formed in log space and the terms summed from the
    smallest magnitude up.
    """
    if z < 0:
        raise InputValidationError(f"window load must be non-negative, got {z}")
    if len(L_table) < k + 1:
        raise InputValidationError(f"L_table covers {len(L_table)} values, need {k + 1}")
    L = np.asarray(L_table[: k + 1], dtype=float)
    if z == 0:
        return float(L[0])
    terms = _poisson_terms(x, L, np.array([float(z)]))[0]
    return x * z + math.fsum(sorted(terms, key=abs))


def _truncation_point(z: float) -> int:
    return int(math.ceil(z + 12.0 * math.sqrt(z) + 50.0))


def expected_cri_poisson(z: float, K: int, i_max: Optional[int] = None, sic: bool = True) -> float:
    """L(z) = sum_n L_n z^n e^-z / n!, the CRI length of a window carrying Poisson(z) users."""
    if z < 0:
        raise InputValidationError(f"window load must be non-negative, got {z}")
    if z == 0:
        return 1.0
    if i_max is None:
        i_max = _truncation_point(z)
    tail = float(poisson.sf(i_max, z))
    if tail >= POISSON_TAIL:
        logger.warning("Poisson tail beyond i_max=%d at z=%g is %.3g", i_max, z, tail)
    table = np.asarray(cri_table(i_max, K, 0.5, sic))
    weights = np.exp(ln_poisson_weights(z, i_max))
    return math.fsum(sorted(table * weights, key=abs))


@lru_cache(maxsize=64)
def windowed_model(K: int, m: Optional[int] = None, n_eval: Optional[int] = None, sic: bool = True) -> WindowedModel:
    """Bound coefficients at anchor m plus L_0..L_m."""
    anchor_m, anchor_n = default_anchor(K)
    m = anchor_m if m is None else m
    n_eval = (anchor_n if m == anchor_m else 2 * m) if n_eval is None else n_eval
    bounds = compute_bounds(m, K, n_eval, sic)
    return WindowedModel(
        K=K,
        m=m,
        coeff_upper=bounds.alpha_m,
        coeff_lower=bounds.beta_m,
        L_table=tuple(lower_table(m, K, sic)),
        sic=sic,
    )


def _sup_load(
    x: float, model: WindowedModel, z_max: float, edge_ok: bool, edge_level: int = logging.WARNING
) -> tuple[float, float]:
    """sup over z in (0, z_max] of z / f(x, m, z): grid scan, then golden-section refinement."""
    L = np.asarray(model.L_table)
    grid = np.arange(GRID_STEP, z_max + GRID_STEP / 2, GRID_STEP)
    objective = grid / _f_values(x, L, grid)
    best = int(np.argmax(objective))

    if best == len(grid) - 1:
        if not edge_ok:
            raise HorizonError(
                f"windowed supremum for K={model.K} sits on the horizon z={grid[best]:g}"
            )
        logger.log(edge_level, "windowed supremum for K=%d at the window edge z=%g", model.K, grid[best])
        return float(objective[best]), float(grid[best])

    lo = grid[best - 1] if best > 0 else grid[0] / 2.0
    hi = grid[best + 1]

    def negative(z: float) -> float:
        return -z / windowed_f(x, model.m, z, model.L_table)

    try:
        found = minimize_scalar(negative, bracket=(lo, grid[best], hi), method="golden", tol=REFINE_TOL)
    except ValueError:
        return float(objective[best]), float(grid[best])
    z_star = float(np.clip(found.x, lo, hi))
    value = -negative(z_star)
    if value < objective[best]:
        return float(objective[best]), float(grid[best])
    return value, z_star


def _windowed(K: int, m: Optional[int], n_eval: Optional[int], sic: bool, z_max_upper: Optional[float]) -> StabilityReport:
    if K < 1:
        raise InputValidationError(f"K must be at least 1, got {K}")
    model = windowed_model(K, m, n_eval, sic)
    lam_s, z_s = _sup_load(model.coeff_upper, model, HORIZON_FACTOR * model.m, edge_ok=False)
    if z_max_upper is None:
        # the default window ends at m, where the lower-coefficient sup usually sits
        lam_u, _ = _sup_load(model.coeff_lower, model, float(model.m), edge_ok=True, edge_level=logging.DEBUG)
    else:
        lam_u, _ = _sup_load(model.coeff_lower, model, float(z_max_upper), edge_ok=True)

    gap = lam_s - lam_u
    if gap > 0:
        level = logging.DEBUG if gap < ROUNDOFF_GAP * lam_s else logging.INFO
        logger.log(
            level, "raising windowed lambda_U %.9f to lambda_S %.9f for K=%d (gap %.3g)", lam_u, lam_s, K, gap
        )
        lam_u = lam_s
    if (lam_u - lam_s) / K > 5e-4:
        logger.warning(
            "windowed bounds for K=%d differ by %.4g: the coefficient assignment matters here",
            K, (lam_u - lam_s) / K,
        )
    return _report(Access.WINDOWED, K, lam_s, lam_u, argmax_z=z_s, m_used=model.m, sic=sic)


def windowed_bounds(
    K: int,
    m: Optional[int] = None,
    n_eval: Optional[int] = None,
    z_max_upper: Optional[float] = None,
) -> StabilityReport:
    """
    Windowed-access bounds with SIC.

    lambda_S uses the upper coefficient alpha_m over z in (0, 8m];
    lambda_U uses the lower coefficient beta_m over z in (0, z_max_upper],
    which defaults to m.
    """
    return _windowed(K, m, n_eval, True, z_max_upper)


def windowed_bounds_no_sic(
    K: int,
    m: Optional[int] = None,
    n_eval: Optional[int] = None,
    z_max_upper: Optional[float] = None,
) -> StabilityReport:
    """Same pipeline on the L*_n table without SIC."""
    return _windowed(K, m, n_eval, False, z_max_upper)


def sensitivity_curve(K: int, m: Optional[int], z_grid: Sequence[float]) -> list[SensitivityPoint]:
    """F(z) = z / (K f(beta_m, m, z)) with and without SIC."""
    z = np.asarray(z_grid, dtype=float)
    if z.size == 0 or np.any(z <= 0) or np.any(np.diff(z) <= 0):
        raise InputValidationError("z_grid must be positive and strictly increasing")
    with_sic = windowed_model(K, m, None, True)
    without = windowed_model(K, m, None, False)
    f = _f_values(with_sic.coeff_lower, np.asarray(with_sic.L_table), z)
    f_star = _f_values(without.coeff_lower, np.asarray(without.L_table), z)
    return [
        SensitivityPoint(z=float(zi), F=float(zi / (K * fi)), F_no_sic=float(zi / (K * gi)))
        for zi, fi, gi in zip(z, f, f_star)
    ]
