"""
Numerics - shared kernels for the tree-algorithm analysis.

Exact binomials, log-domain combinatorics and the complex gamma function.
Everything here is a pure function.
"""

import math
from fractions import Fraction
from typing import Union

import numpy as np
from scipy.special import gammaln, loggamma

from errors import GammaPoleError, InputValidationError

# Exact rationals in lowest terms (Fraction normalises on construction).
BigRational = Fraction

# Complex values are Python complex numbers.
ComplexValue = complex

# Below this real part the gamma argument is shifted up before log-gamma.
GAMMA_SHIFT_THRESHOLD = 0.5


def _check_pair(n: int, k: int) -> None:
    if n < 0 or k < 0:
        raise InputValidationError(f"binomial arguments must be non-negative, got n={n}, k={k}")
    if k > n:
        raise InputValidationError(f"binomial requires k <= n, got n={n}, k={k}")


def binomial_exact(n: int, k: int) -> int:
    """Exact C(n, k) as an arbitrary-precision integer."""
    _check_pair(n, k)
    return math.comb(n, k)


def ln_binomial(n: int, k: int) -> float:
    """Natural log of C(n, k) via log-gamma."""
    _check_pair(n, k)
    if k == 0 or k == n:
        return 0.0
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def ln_binomial_row(n: int) -> np.ndarray:
    """ln C(n, j) for j = 0..n as a float array."""
    if n < 0:
        raise InputValidationError(f"n must be non-negative, got {n}")
    j = np.arange(n + 1, dtype=float)
    row = gammaln(n + 1.0) - gammaln(j + 1.0) - gammaln(n - j + 1.0)
    row[0] = 0.0
    row[-1] = 0.0
    return row


def ln_binomial_pmf_row(n: int, p: float) -> np.ndarray:
    """ln of C(n, j) p^j (1-p)^(n-j) for j = 0..n."""
    j = np.arange(n + 1, dtype=float)
    return ln_binomial_row(n) + j * math.log(p) + (n - j) * math.log1p(-p)


def ln_poisson_weights(z: float, i_max: int) -> np.ndarray:
    """ln of z^i e^{-z} / i! for i = 0..i_max (z > 0)."""
    i = np.arange(i_max + 1, dtype=float)
    return i * math.log(z) - z - gammaln(i + 1.0)


def _is_pole(z: complex) -> bool:
    return z.imag == 0.0 and z.real <= 0.0 and float(z.real).is_integer()


def complex_gamma(z: Union[complex, float]) -> complex:
    """
    Gamma function on the complex plane.

    Arguments with Re z < 0.5 are shifted with Γ(z) = Γ(z+2) / (z(z+1)) until
    the real part reaches the threshold; the shifted value comes from
    scipy's principal-branch log-gamma.
    """
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise InputValidationError(f"gamma argument must be finite, got {z}")
    if _is_pole(z):
        raise GammaPoleError(f"gamma has a pole at {z.real:g}")

    divisor = complex(1.0, 0.0)
    shifted = z
    while shifted.real < GAMMA_SHIFT_THRESHOLD:
        divisor *= shifted * (shifted + 1.0)
        shifted += 2.0

    return complex(np.exp(loggamma(shifted))) / divisor
