"""
Asymptotic behaviour of L_n for fair binary splitting.

The mean grows like n / (K ln 2) with a log-periodic ripple whose amplitude
and phase come from the complex residue coefficient B(K, 1).
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import gammainc

from errors import GammaPoleError, InputValidationError, NonConvergenceError
from numerics import ComplexValue, complex_gamma

LN2 = math.log(2.0)
# Imaginary spacing of the residue poles, 2*pi/ln 2.
POLE_SPACING = 2.0 * math.pi / LN2


@dataclass(frozen=True)
class AsymptoticModel:
    """Residue constants of the m = 1 pole pair for a given K."""
    K: int
    B_K1: ComplexValue
    amplitude: float
    phase: float
    mean_coefficient: float

    def ripple(self, n: float) -> float:
        """1 - amplitude * cos(2 pi log2 n + phase)."""
        return 1.0 - self.amplitude * math.cos(2.0 * math.pi * math.log2(n) + self.phase)


def _check_K(K: int) -> None:
    if K < 1:
        raise InputValidationError(f"K must be at least 1, got {K}")


def mellin_A(K: int, m: int) -> ComplexValue:
    """A(K, m) = sum_{k=0}^{K} (s)_k / k! at the pole s = -1 + 2 pi j m / ln 2."""
    _check_K(K)
    jy = complex(0.0, POLE_SPACING * m)
    term = complex(1.0, 0.0)
    total = term
    for k in range(1, K + 1):
        term = term * (k - 2 + jy) / k
        total += term
    return total


def mellin_B(K: int, m: int) -> ComplexValue:
    """B(K, m) = Γ(-1 + 2 pi j m / ln 2) A(K, m)."""
    _check_K(K)
    return complex_gamma(complex(-1.0, POLE_SPACING * m)) * mellin_A(K, m)


@lru_cache(maxsize=256)
def asymptotic_model(K: int) -> AsymptoticModel:
    _check_K(K)
    b = mellin_B(K, 1)
    return AsymptoticModel(
        K=K,
        B_K1=b,
        amplitude=2.0 * K * abs(b),
        phase=math.atan2(b.imag, b.real),
        mean_coefficient=1.0 / (K * LN2),
    )


def oscillation_amplitude(K: int) -> float:
    """2K |B(K, 1)|."""
    return asymptotic_model(K).amplitude


def _check_nK(n: float, K: int) -> None:
    _check_K(K)
    if n < 1:
        raise InputValidationError(f"n must be at least 1, got {n}")


def asymptotic_cri(n: float, K: int, residues: int = 1) -> float:
    """
    Asymptotic L_n.

    With residues=1 this is n/(K ln 2) [1 - 2K|B(K,1)| cos(2 pi log2 n + arg B(K,1))];
    larger values add the pole pairs m = 2..residues as a truncation diagnostic.
    """
    _check_nK(n, K)
    if residues < 1:
        raise InputValidationError(f"residues must be at least 1, got {residues}")
    if residues == 1:
        model = asymptotic_model(K)
        return n * model.mean_coefficient * model.ripple(n)

    log2n = math.log2(n)
    ripple = 0.0
    for m in range(1, residues + 1):
        b = mellin_B(K, m)
        ripple += abs(b) * math.cos(2.0 * math.pi * m * log2n + math.atan2(b.imag, b.real))
    return n / (K * LN2) - 2.0 * n / LN2 * ripple


def asymptotic_throughput(n: float, K: int, residues: int = 1) -> float:
    """T_n = n / (K L_n) with the asymptotic L_n."""
    return n / (K * asymptotic_cri(n, K, residues))


def asymptotic_no_sic(n: float, K: int) -> tuple[float, float]:
    """(L*_n, T*_n) without SIC: twice the SIC length, half the throughput."""
    length = asymptotic_cri(n, K)
    return 2.0 * length, n / (K * 2.0 * length)


def residue_correction(n: float, K: int, residues: int) -> float:
    """Relative change of the asymptotic L_n when pole pairs up to `residues` are kept."""
    return asymptotic_cri(n, K, residues) / asymptotic_cri(n, K, 1) - 1.0


def throughput_extremes(K: int) -> tuple[float, float]:
    """(min, max) of the asymptotic throughput over one oscillation period."""
    amplitude = oscillation_amplitude(K)
    return LN2 / (1.0 + amplitude), LN2 / (1.0 - amplitude)


# ============== Mellin transform of the Poisson tail ==============

def mellin_g(s: complex, K: int) -> complex:
    """
    Mellin transform of g(x) = P{Poisson(x) > K}.

    Closed form -Γ(s+K+1) / (s K!), valid on the strip -K-1 < Re s < 0; it
    equals 1/K at s = -1.
    """
    _check_K(K)
    s = complex(s)
    if s == 0:
        raise GammaPoleError("Mellin transform of the Poisson tail has a pole at s = 0")
    return -complex_gamma(s + K + 1) / (s * math.factorial(K))


def mellin_g_numeric(s: complex, K: int) -> complex:
    """Quadrature of g(x) x^(s-1) over (0, inf) on -2 < Re s < 0."""
    _check_K(K)
    s = complex(s)
    if not (-2.0 < s.real < 0.0):
        raise InputValidationError(f"Re s must lie in (-2, 0), got {s.real}")

    def part(x: float, real: bool) -> float:
        value = gammainc(K + 1, x) * np.exp((s - 1.0) * math.log(x))
        return value.real if real else value.imag

    total = complex(0.0, 0.0)
    for lo, hi in ((0.0, 1.0), (1.0, np.inf)):
        re, re_err = quad(part, lo, hi, args=(True,), limit=200)
        im, im_err = (0.0, 0.0) if s.imag == 0 else quad(part, lo, hi, args=(False,), limit=200)
        if max(re_err, im_err) > 1e-6 * max(1.0, abs(re), abs(im)):
            raise NonConvergenceError(f"quadrature of the Poisson tail did not settle at s={s}")
        total += complex(re, im)
    return total
