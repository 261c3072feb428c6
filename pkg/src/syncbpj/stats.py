"""Gamma fits of ISI samples, KS validation and polynomial rate surfaces."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special as sp

from .errors import DataError, DegenerateDataError, SurfaceFitError
from .neuron import IsiSample
from .special import digamma, log_gamma, trigamma

log = logging.getLogger(__name__)

MIN_RECOMMENDED_SAMPLES = 30
_KS_C = {0.10: 1.2238, 0.05: 1.3581, 0.01: 1.6276}


@dataclass(frozen=True)
class GammaFit:
    m_gam: float
    b_gam: float
    n_samples: int
    log_likelihood: float

    def __post_init__(self):
        if not (self.m_gam > 0 and self.b_gam > 0):
            raise DataError(f"invalid gamma fit: shape={self.m_gam}, rate={self.b_gam}")

    @property
    def mean(self) -> float:
        return self.m_gam / self.b_gam

    def cdf(self, t):
        return sp.gammainc(self.m_gam, self.b_gam * np.asarray(t, dtype=float))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        tp = t[pos]
        out[pos] = np.exp(
            self.m_gam * math.log(self.b_gam) + (self.m_gam - 1) * np.log(tp)
            - self.b_gam * tp - log_gamma(self.m_gam)
        )
        return out


def _as_array(sample) -> np.ndarray:
    x = np.asarray(sample.isis if isinstance(sample, IsiSample) else sample, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise DataError("need a nonempty one-dimensional sample")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DataError("all samples must be finite and positive")
    return x


def solve_shape(target: float, tol: float = 1e-13, max_iter: int = 100) -> float:
    """Solve ``log(k) - digamma(k) = target`` for the shape ``k``.

    The left side falls monotonically from +inf to 0, so ``target`` must
    be positive.  Newton steps start from the Minka approximation and
    fall back to bisection whenever they leave the bracket.
    """
    if not target > 0:
        raise DegenerateDataError(f"shape equation needs a positive right side, got {target}")

    def g(k):
        return math.log(k) - digamma(k) - target

    k = (3.0 - target + math.sqrt((target - 3.0) ** 2 + 24.0 * target)) / (12.0 * target)
    lo, hi = 0.0, math.inf
    for _ in range(max_iter):
        r = g(k)
        if r > 0:
            lo = k
        else:
            hi = k
        if abs(r) <= tol * max(1.0, target):
            return k
        step = r / (1.0 / k - trigamma(k))
        new = k - step
        if not lo < new < hi:
            new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * k
        if abs(new - k) <= 4e-16 * k:
            return new
        k = new
    raise DegenerateDataError(f"shape solver did not converge for target {target}")


def fit_gamma_mle(sample) -> GammaFit:
    """Maximum-likelihood Gamma fit.

    Parameters
    ----------
    sample : IsiSample or array_like
        Positive intervals in seconds.

    Returns
    -------
    GammaFit
        Shape and rate (1/s) satisfying both score equations.
    """
    x = _as_array(sample)
    if x.size < MIN_RECOMMENDED_SAMPLES:
        warnings.warn(f"gamma fit on only {x.size} samples", RuntimeWarning, stacklevel=2)
    mean = float(np.mean(x))
    logs = np.log(x)
    mean_log = float(np.mean(logs))
    target = math.log(mean) - mean_log
    if np.all(x == x[0]) or target <= 1e-15:
        raise DegenerateDataError("sample has no spread; the gamma shape is unbounded")
    k = solve_shape(target)
    rate = k / mean
    n = x.size
    ll = n * (k * math.log(rate) - log_gamma(k)) + (k - 1.0) * float(np.sum(logs)) - rate * float(np.sum(x))
    return GammaFit(k, rate, n, ll)


def score_residual(sample, fit: GammaFit) -> float:
    """Residual of the shape score equation at ``fit``."""
    x = _as_array(sample)
    return math.log(fit.m_gam) - digamma(fit.m_gam) - (math.log(np.mean(x)) - np.mean(np.log(x)))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    passed: bool
    critical_value: float
    n: int


def ks_critical_value(n: int, alpha: float = 0.05) -> float:
    """Asymptotic one-sample threshold ``c(alpha) / sqrt(n)``."""
    c = _KS_C.get(round(alpha, 10), math.sqrt(-0.5 * math.log(alpha / 2.0)))
    return c / math.sqrt(n)


def ks_test_gamma(sample, fit: GammaFit, alpha: float = 0.05) -> KsResult:
    """One-sample KS test of ``sample`` against the fitted Gamma CDF.

    Parameters are estimated from the same data, which makes the standard
    threshold conservative.
    """
    x = np.sort(_as_array(sample))
    n = x.size
    f = fit.cdf(x)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    d = min(max(d, 0.0), 1.0)
    crit = ks_critical_value(n, alpha)
    return KsResult(d, d < crit, crit, n)


@dataclass(frozen=True)
class SurfaceCoefficients:
    """Per-synchrony-level polynomial fits of rate and shape against input rate.

    ``rate(lam) = d1_b * lam + d0_b`` and ``shape(lam) = d2_m * lam**2 + d1_m * lam + d0_m``.
    """

    s: float
    d1_b: float
    d0_b: float
    d2_m: float
    d1_m: float
    d0_m: float
    residual_b: float = 0.0
    residual_m: float = 0.0
    lambda_min: float = math.nan
    lambda_max: float = math.nan

    @property
    def slope_ok(self) -> bool:
        return self.d1_b > 0

    def rate(self, lam):
        return self.d1_b * np.asarray(lam, dtype=float) + self.d0_b

    def shape(self, lam):
        lam = np.asarray(lam, dtype=float)
        return (self.d2_m * lam + self.d1_m) * lam + self.d0_m

    def to_row(self):
        return [self.s, self.d1_b, self.d0_b, self.d2_m, self.d1_m, self.d0_m]


def _lstsq(design, y):
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise SurfaceFitError(f"rank-deficient design (rank {rank} < {design.shape[1]})")
    resid = float(np.sum((design @ coef - y) ** 2))
    return coef, resid


def fit_surfaces(fits: Iterable[tuple[float, GammaFit]], s: float = math.nan) -> SurfaceCoefficients:
    """OLS fits: rate linear and shape quadratic in the input rate."""
    pairs = list(fits)
    lam = np.array([p[0] for p in pairs], dtype=float)
    if np.unique(lam).size < 3:
        raise SurfaceFitError(f"need at least 3 distinct input rates, got {np.unique(lam).size}")
    b = np.array([p[1].b_gam for p in pairs])
    m = np.array([p[1].m_gam for p in pairs])
    (d1_b, d0_b), rb = _lstsq(np.column_stack([lam, np.ones_like(lam)]), b)
    (d2_m, d1_m, d0_m), rm = _lstsq(np.column_stack([lam**2, lam, np.ones_like(lam)]), m)
    if d1_b <= 0:
        log.warning("rate slope d1_b=%.4g at s=%s is not positive", d1_b, s)
    return SurfaceCoefficients(
        float(s), float(d1_b), float(d0_b), float(d2_m), float(d1_m), float(d0_m),
        rb, rm, float(lam.min()), float(lam.max()),
    )


def freedman_diaconis_edges(x: Sequence[float]) -> np.ndarray:
    """Histogram edges with bin width ``2 IQR / n^(1/3)``."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) / np.cbrt(x.size)
    if not width > 0 or hi <= lo:
        return np.array([lo, hi if hi > lo else lo + 1.0])
    nbins = max(1, int(math.ceil((hi - lo) / width)))
    return np.linspace(lo, hi, nbins + 1)


def write_fit_table(rows, path, comment: str | None = None) -> None:
    """Rows of ``(s, lambda_ex, GammaFit, KsResult)``."""
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["s", "lambda_ex_hz", "m_gam", "b_gam", "ks_stat", "ks_pass", "n"])
        for s, lam, fit, ks in rows:
            w.writerow([repr(float(s)), repr(float(lam)), repr(fit.m_gam), repr(fit.b_gam),
                        repr(ks.statistic), int(ks.passed), fit.n_samples])


def write_surface_table(surfaces: Iterable[SurfaceCoefficients], path, comment: str | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["s", "d1_b", "d0_b", "d2_m", "d1_m", "d0_m"])
        for c in surfaces:
            w.writerow([repr(float(v)) for v in c.to_row()])


def read_surface_table(path) -> list[SurfaceCoefficients]:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty surface table")
    header, body = rows[0], rows[1:]
    need = ["s", "d1_b", "d0_b", "d2_m", "d1_m", "d0_m"]
    if header[: len(need)] != need:
        raise DataError(f"surface table header must start with {need}, got {header}")
    return [SurfaceCoefficients(*(float(v) for v in r[:6])) for r in body]
