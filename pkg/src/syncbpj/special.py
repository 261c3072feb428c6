"""Digamma, trigamma and log-gamma for positive real arguments.

Each uses upward recurrence until the argument exceeds ``_SHIFT`` and then
an asymptotic series, which gives close to double precision.
"""

from __future__ import annotations

import math

from .errors import ParameterError

_SHIFT = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Bernoulli-number coefficients B_2k / (2k) for the digamma series
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_2k for the trigamma series
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)
# B_2k / (2k (2k - 1)) for the Stirling series
_STIRLING_COEF = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)


def _check(x: float) -> float:
    x = float(x)
    if not x > 0 or math.isinf(x):
        raise ParameterError(f"argument must be a finite positive real, got {x}")
    return x


def digamma(x: float) -> float:
    """Logarithmic derivative of the gamma function, ``x > 0``."""
    x = _check(x)
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_COEF:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """Derivative of :func:`digamma`, ``x > 0``."""
    x = _check(x)
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv * inv2
    for c in _TRIGAMMA_COEF:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def log_gamma(x: float) -> float:
    """Natural log of the gamma function, ``x > 0``."""
    x = _check(x)
    # Accumulate the recurrence as a product; take one log at the end.
    prod = 1.0
    shift = 0.0
    while x < _SHIFT:
        prod *= x
        x += 1.0
        if prod > 1e280:
            shift += math.log(prod)
            prod = 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv
    for c in _STIRLING_COEF:
        series += c * power
        power *= inv2
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series - math.log(prod) - shift
