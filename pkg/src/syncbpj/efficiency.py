"""Energy-efficient input distributions for the Gamma ISI channel.

The optimal ISI law under fixed mean and mean-log constraints is a Gamma
law with shape ``kappa`` and rate ``beta``.  When the channel shape does
not depend on the input rate, the input density that pushes the channel
onto that law is known in closed form.  Substituting ``u = d1_b * lam + d0_b``
and ``x = beta / u`` turns it into a Beta(kappa, d0_m - kappa) law in ``x``,
which gives the normaliser, the CDF and the quantiles used here.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy import special as sp

from .errors import (
    InfeasibleConstraintsError,
    IntegrationError,
    NumericalError,
    ParameterError,
    TheoremInapplicableError,
)
from .special import digamma, log_gamma
from .stats import SurfaceCoefficients, solve_shape

QUAD_ABS_TOL = 1e-9
QUAD_REL_TOL = 1e-11
TAIL_MASS = 1e-5


@dataclass(frozen=True)
class Constraints:
    """Mean ISI ``g0`` (s) and mean log-ISI ``g1`` (log s)."""

    g0: float
    g1: float

    def __post_init__(self):
        if not self.g0 > 0:
            raise InfeasibleConstraintsError(f"mean ISI must be positive, got {self.g0}")
        if not self.g1 < math.log(self.g0):
            raise InfeasibleConstraintsError(
                f"mean log-ISI {self.g1} must be below log(mean ISI) = {math.log(self.g0):.6g}"
            )


@dataclass(frozen=True)
class OptimalIsiLaw:
    kappa: float
    beta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.beta > 0):
            raise ParameterError(f"shape and rate must be positive, got ({self.kappa}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.kappa / self.beta

    @property
    def mean_log(self) -> float:
        return digamma(self.kappa) - math.log(self.beta)

    @property
    def entropy(self) -> float:
        """Differential entropy in nats."""
        k = self.kappa
        return k - math.log(self.beta) + log_gamma(k) + (1.0 - k) * digamma(k)

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            out = (self.kappa * math.log(self.beta) + (self.kappa - 1.0) * np.log(t)
                   - self.beta * t - log_gamma(self.kappa))
        return np.where(t > 0, out, -np.inf)

    def pdf(self, t):
        return np.exp(self.logpdf(t))


def solve_gamma_constraints(c: Constraints) -> OptimalIsiLaw:
    """Gamma law with mean ``g0`` and mean log ``g1``.

    With ``beta = kappa / g0`` the log constraint becomes
    ``log(kappa) - digamma(kappa) = log(g0) - g1``, whose left side is
    strictly decreasing in ``kappa``.
    """
    target = math.log(c.g0) - c.g1
    kappa = solve_shape(target, tol=1e-15)
    return OptimalIsiLaw(kappa, kappa / c.g0)


@dataclass(frozen=True)
class EnergyModel:
    """Energy per ISI ``C0 + C1 * T`` in arbitrary units."""

    C0: float = 1.0
    C1: float = 10.0

    def __post_init__(self):
        if self.C0 < 0 or self.C1 < 0 or (self.C0 == 0 and self.C1 == 0):
            raise ParameterError("energy costs must be nonnegative and not both zero")

    def mean_energy(self, mean_isi: float) -> float:
        return self.C0 + self.C1 * mean_isi


@dataclass(frozen=True)
class ChannelModel:
    """Conditional Gamma ISI law parameterised by the fitted surfaces.

    With ``quadratic_terms_dropped`` the shape is the constant ``d0_m``.
    """

    surface: SurfaceCoefficients
    quadratic_terms_dropped: bool = False

    def dropped(self) -> "ChannelModel":
        return replace(self, quadratic_terms_dropped=True)

    def shape(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.quadratic_terms_dropped:
            return np.full_like(lam, self.surface.d0_m)
        return self.surface.shape(lam)

    def rate(self, lam):
        return self.surface.rate(lam)

    def logpdf(self, t, lam):
        """``log f(t | lam)``; broadcasts over ``t`` and ``lam``."""
        t = np.asarray(t, dtype=float)
        a = self.shape(lam)
        b = self.rate(lam)
        if np.any(a <= 0) or np.any(b <= 0):
            raise NumericalError("channel shape or rate is not positive at the requested input rates")
        with np.errstate(divide="ignore"):
            out = a * np.log(b) + (a - 1.0) * np.log(t) - b * t - sp.gammaln(a)
        return np.where(t > 0, out, -np.inf)

    def check_working_range(self, lam) -> None:
        a, b = self.shape(lam), self.rate(lam)
        if np.any(a <= 0) or np.any(b <= 0):
            raise NumericalError("channel shape or rate is not positive in the working range")


@dataclass(frozen=True)
class OptimalInputDist:
    """Closed-form input-rate density for a dropped-terms channel.

    When ``beta < d0_b`` the unconstrained support starts at a negative
    rate.  The density is then truncated to ``lam >= 0`` and renormalised;
    ``truncated_mass`` is the removed probability.
    """

    surface: SurfaceCoefficients
    law: OptimalIsiLaw
    support_min: float
    truncated_mass: float = 0.0
    log_norm: float = field(default=0.0, repr=False)

    @property
    def kappa(self) -> float:
        return self.law.kappa

    @property
    def beta(self) -> float:
        return self.law.beta

    @property
    def a(self) -> float:
        return self.surface.d0_m

    @property
    def boundary(self) -> float:
        """Root of ``d1_b * lam + d0_b = beta``; may be negative."""
        return (self.beta - self.surface.d0_b) / self.surface.d1_b

    @property
    def normalizer(self) -> float:
        """Leading constant of the untruncated density."""
        return math.exp(self._log_const())

    def _log_const(self) -> float:
        k, a = self.kappa, self.a
        return (k * math.log(self.beta) + math.log(self.surface.d1_b) + log_gamma(a)
                - log_gamma(k) - log_gamma(a - k))

    @property
    def mode(self) -> float:
        k, a, b = self.kappa, self.a, self.beta
        if a - k - 1.0 > 0:
            peak = (a * b / (k + 1.0) - self.surface.d0_b) / self.surface.d1_b
            return max(peak, self.support_min)
        return self.support_min

    def logpdf(self, lam):
        lam = np.asarray(lam, dtype=float)
        c = self.surface
        k, a = self.kappa, self.a
        inside = lam >= self.support_min
        gap = np.where(inside, c.d1_b * (lam - self.boundary), 1.0)
        u = np.where(inside, c.d1_b * lam + c.d0_b, 1.0)
        with np.errstate(divide="ignore"):
            val = self.log_norm + (a - k - 1.0) * np.log(gap) - a * np.log(u)
        return np.where(inside, val, -np.inf)

    def pdf(self, lam):
        return np.exp(self.logpdf(lam))

    def logpdf_offset(self, y):
        """Log density at ``support_min + y``, exact near a singular floor."""
        y = np.asarray(y, dtype=float)
        c = self.surface
        k, a = self.kappa, self.a
        lam = self.support_min + y
        gap = c.d1_b * (y + (self.support_min - self.boundary))
        u = c.d1_b * lam + c.d0_b
        with np.errstate(divide="ignore", invalid="ignore"):
            val = self.log_norm + (a - k - 1.0) * np.log(gap) - a * np.log(u)
        return np.where(y >= 0, val, -np.inf)

    def _x_of(self, lam):
        u = self.surface.d1_b * np.asarray(lam, dtype=float) + self.surface.d0_b
        return np.clip(self.beta / u, 0.0, 1.0)

    def cdf(self, lam):
        lam = np.asarray(lam, dtype=float)
        k, a = self.kappa, self.a
        # P(lam' <= lam) = P(x >= beta / u) for the Beta-distributed x
        upper = sp.betainc(k, a - k, self._x_of(np.maximum(lam, self.support_min)))
        top = 1.0 - self.truncated_mass
        out = (top - upper) / top
        return np.where(lam < self.support_min, 0.0, np.clip(out, 0.0, 1.0))

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        k, a = self.kappa, self.a
        top = 1.0 - self.truncated_mass
        x = sp.betaincinv(k, a - k, top * (1.0 - q))
        with np.errstate(divide="ignore"):
            lam = (self.beta / x - self.surface.d0_b) / self.surface.d1_b
        return np.maximum(lam, self.support_min)

    def working_range(self, tail: float = TAIL_MASS) -> tuple[float, float]:
        return self.support_min, float(self.ppf(1.0 - tail))

    def channel(self) -> ChannelModel:
        return ChannelModel(self.surface, quadratic_terms_dropped=True)


def optimal_input_density(channel: ChannelModel, law: OptimalIsiLaw) -> OptimalInputDist:
    """Input-rate density whose channel output is exactly ``Gamma(kappa, beta)``."""
    c = channel.surface
    if not channel.quadratic_terms_dropped:
        raise TheoremInapplicableError("the closed form needs a channel with the shape terms dropped")
    if not c.d1_b > 0:
        raise TheoremInapplicableError(f"rate slope d1_b must be positive, got {c.d1_b:.6g}")
    if not c.d0_m - law.kappa > 0:
        raise TheoremInapplicableError(
            f"shape intercept d0_m={c.d0_m:.6g} must exceed kappa={law.kappa:.6g}"
        )
    boundary = (law.beta - c.d0_b) / c.d1_b
    dist = OptimalInputDist(c, law, max(0.0, boundary))
    truncated = 0.0
    if boundary < 0:
        # Mass below lam = 0 sits at x in (beta/d0_b, 1].
        truncated = float(sp.betaincc(law.kappa, c.d0_m - law.kappa, law.beta / c.d0_b))
        if not truncated < 1.0:
            raise TheoremInapplicableError("no probability mass remains at nonnegative rates")
    log_norm = dist._log_const() - math.log1p(-truncated)
    return replace(dist, truncated_mass=truncated, log_norm=log_norm)


# quadrature helpers

def _quad(f, lo, hi, points=None, limit=500):
    kw = dict(epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=limit, full_output=1)
    if math.isinf(hi):
        res = integrate.quad(f, lo, hi, **kw)
    else:
        res = integrate.quad(f, lo, hi, points=points, **kw)
    val, err = res[0], res[1]
    if len(res) > 3 and not math.isfinite(val):
        raise IntegrationError(f"quadrature on [{lo:.6g}, {hi:.6g}] returned {val} (error estimate {err:.3g})")
    if not math.isfinite(val):
        raise IntegrationError(f"non-finite quadrature result on [{lo:.6g}, {hi:.6g}]")
    return val, err


def _piecewise_quad(f, scale, decades=8):
    """Integrate ``f`` on ``[0, inf)`` with breaks at ``scale * 10**k``."""
    edges = [0.0] + [scale * 10.0**k for k in range(-decades, decades + 1)]
    total = err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = _quad(f, a, b)
        total += v
        err += e
    # Heavy power-law tails defeat the infinite-interval rule; map
    # lam = L / tau onto (0, 1] instead, leaving an integrable endpoint.
    L = edges[-1]

    def tail(tau):
        return f(L / tau) * L / (tau * tau) if tau > 0 else 0.0

    v, e = _quad(tail, 0.0, 1.0)
    return total + v, err + e


def numerical_normalization(dist: OptimalInputDist) -> float:
    """Adaptive quadrature of the density over its support."""
    scale = 1.0 / dist.surface.d1_b * max(dist.beta, 1e-300)
    val, _ = _piecewise_quad(lambda y: math.exp(float(dist.logpdf_offset(y))), scale)
    return val


def marginal_isi_density(dist: OptimalInputDist, t: float, channel: ChannelModel | None = None) -> float:
    """``f_T(t)`` by adaptive quadrature over the input rate.

    ``channel`` defaults to the dropped-terms channel of ``dist``; pass the
    full fitted channel to restore the shape terms.
    """
    if t <= 0:
        return 0.0
    ch = dist.channel() if channel is None else channel

    lo = dist.support_min

    def integrand(y):
        return math.exp(float(dist.logpdf_offset(y)) + float(ch.logpdf(t, lo + y)))

    # The kernel decays like exp(-d1_b * lam * t), so break on that scale.
    scale = 1.0 / (dist.surface.d1_b * t)
    val, _ = _piecewise_quad(integrand, scale, decades=4)
    return val


@functools.lru_cache(maxsize=None)
def _legendre_rule(order: int):
    return np.polynomial.legendre.leggauss(order)


def _gl_nodes(lo: float, hi: float, n: int, max_order: int = 48):
    """Composite Gauss-Legendre with about ``n`` nodes on ``[lo, hi]``.

    Large single rules are costly to build, so high node counts are split
    into equal panels of at most ``max_order`` points.
    """
    panels = max(1, math.ceil(n / max_order))
    order = math.ceil(n / panels)
    x, w = _legendre_rule(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def l1_distance_to_law(dist: OptimalInputDist, law: OptimalIsiLaw, t_lo: float, t_hi: float,
                       channel: ChannelModel | None = None, n: int = 200) -> float:
    """``int |f_T - Gamma(kappa, beta)| dt`` on ``[t_lo, t_hi]`` (log-t Gauss-Legendre)."""
    z, w = _gl_nodes(math.log(t_lo), math.log(t_hi), n)
    t = np.exp(z)
    diff = np.array([marginal_isi_density(dist, ti, channel) for ti in t]) - law.pdf(t)
    return float(np.sum(w * t * np.abs(diff)))


@dataclass(frozen=True)
class LaplaceReport:
    t: np.ndarray
    ratio: np.ndarray
    max_residual: float
    passed: bool
    tolerance: float = 1e-6


def verify_theorem1_laplace(channel: ChannelModel, law: OptimalIsiLaw,
                            dist: OptimalInputDist | None = None,
                            n_points: int = 20, tol: float = 1e-6) -> LaplaceReport:
    """Check the transform identity linking the input density to the output law.

    For each ``t`` on a log grid over ``[g0/100, 20 g0]`` the input-weighted
    channel kernel, integrated over rates, is divided by
    ``beta^k t^(k-1) exp(-(beta - d0_b) t) / Gamma(k)``.  Both sides carry
    the factor ``exp(d0_b t)``, so the ratio is formed in log space.
    ``dist`` defaults to the closed-form density for ``(channel, law)``.
    """
    ch = channel if channel.quadratic_terms_dropped else channel.dropped()
    if dist is None:
        dist = optimal_input_density(ch, law)
    c = ch.surface
    g0 = law.mean
    ts = np.geomspace(g0 / 100.0, 20.0 * g0, n_points)
    a = c.d0_m
    ratios = np.empty(n_points)
    for i, t in enumerate(ts):
        log_rhs = (law.kappa * math.log(law.beta) + (law.kappa - 1.0) * math.log(t)
                   - (law.beta - c.d0_b) * t - log_gamma(law.kappa))

        def integrand(y, t=t, log_rhs=log_rhs):
            v = c.d1_b * (dist.support_min + y)
            log_kernel = -v * t + a * math.log(v + c.d0_b) + (a - 1.0) * math.log(t) - log_gamma(a)
            return math.exp(float(dist.logpdf_offset(y)) + log_kernel - log_rhs)

        scale = 1.0 / (c.d1_b * t)
        ratios[i], _ = _piecewise_quad(integrand, scale, decades=4)
    resid = float(np.max(np.abs(ratios - 1.0)))
    return LaplaceReport(ts, ratios, resid, resid < tol, tol)


# mutual information

def _quantile_nodes(dist: OptimalInputDist, tail: float = TAIL_MASS, per_panel: int = 48):
    """Rate nodes and weights from composite Gauss-Legendre in probability."""
    cuts = [0.0, 0.5, 0.9]
    while 1.0 - cuts[-1] > tail * 1.0001:
        cuts.append(1.0 - (1.0 - cuts[-1]) / 10.0)
    cuts[-1] = 1.0 - tail
    q, w = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        qi, wi = _gl_nodes(a, b, per_panel)
        q.append(qi)
        w.append(wi)
    q, w = np.concatenate(q), np.concatenate(w)
    return dist.ppf(q), w / w.sum()


@dataclass(frozen=True)
class EfficiencyResult:
    mutual_information: float
    mean_energy: float
    ratio: float
    mean_isi: float
    output_entropy: float


def _mixture_information(log_kernel: np.ndarray, weights: np.ndarray, log_t: np.ndarray, t_w: np.ndarray):
    """Mutual information (nats) and output entropy of a finite mixture.

    ``log_kernel[i, j]`` is ``log f(t_i | lam_j)``; integration in ``log t``.
    """
    log_mix = sp.logsumexp(log_kernel, axis=1, b=weights)
    jac = np.exp(log_t)
    dens = np.exp(log_kernel)
    info = float(np.sum(weights * np.sum((t_w * jac)[:, None] * dens * (log_kernel - log_mix[:, None]), axis=0)))
    mix = np.exp(log_mix)
    with np.errstate(invalid="ignore"):
        h = -float(np.sum(t_w * jac * np.where(mix > 0, mix * log_mix, 0.0)))
    return info, h


def _t_grid(shape, rate, n_t):
    lo = np.min(sp.gammaincinv(shape, 1e-14) / rate)
    hi = np.max(sp.gammainccinv(shape, 1e-14) / rate)
    lo = max(lo, 1e-300)
    return _gl_nodes(math.log(lo), math.log(hi), n_t)


def bits_per_joule(dist: OptimalInputDist, channel: ChannelModel | None = None,
                   energy: EnergyModel = EnergyModel(), weights: np.ndarray | None = None,
                   n_t: int = 3000) -> EfficiencyResult:
    """Mutual information per ISI, mean energy per ISI and their ratio.

    The input is discretised on quantile nodes up to the ``1 - 1e-5``
    point; ``weights`` replaces the node weights (used for perturbed
    inputs).  Output density is the matching finite mixture, which keeps
    the information nonnegative by construction.
    """
    ch = dist.channel() if channel is None else channel
    lam, w = _quantile_nodes(dist)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != lam.shape or np.any(w < 0):
            raise ParameterError("weights must be nonnegative with one entry per rate node")
        w = w / w.sum()
    a, b = ch.shape(lam), ch.rate(lam)
    ch.check_working_range(lam)
    log_t, t_w = _t_grid(a, b, n_t)
    t = np.exp(log_t)
    log_kernel = ch.logpdf(t[:, None], lam[None, :])
    info, h_out = _mixture_information(log_kernel, w, log_t, t_w)
    if not math.isfinite(info):
        raise NumericalError("mutual-information integrand is not finite")
    mean_isi = float(np.sum(w * a / b))
    bits = info / math.log(2.0)
    e = energy.mean_energy(mean_isi)
    return EfficiencyResult(bits, e, bits / e, mean_isi, h_out)


def feasible_perturbations(dist: OptimalInputDist, n: int, epsilon: float, seed: int,
                           max_tries: int = 10000) -> list[np.ndarray]:
    """Perturbed node weights that keep ``E[T]`` and ``E[log T]`` fixed.

    Each draw scales the node weights by ``1 + epsilon * phi`` where the
    random profile ``phi`` is projected orthogonal (in the weighted inner
    product) to the constant, mean-ISI and log-rate profiles, so the mass
    and both ISI moments are unchanged.  Draws producing a negative weight
    are rejected.
    """
    ch = dist.channel()
    lam, w = _quantile_nodes(dist)
    a, b = ch.shape(lam), ch.rate(lam)
    basis = np.column_stack([np.ones_like(lam), a / b, np.log(b)])
    # Orthogonality is with respect to the weighted inner product.
    q, _ = np.linalg.qr(basis * w[:, None])
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        phi = rng.standard_normal(lam.size)
        phi -= q @ (q.T @ phi)
        phi /= np.max(np.abs(phi)) or 1.0
        cand = w * (1.0 + epsilon * phi)
        if np.all(cand >= 0):
            out.append(cand)
            if len(out) == n:
                return out
    raise NumericalError(f"only {len(out)} of {n} feasible perturbations found")


# entropy comparison

def differential_entropy(logpdf, lo: float, hi: float, n: int = 4000) -> float:
    """``-int f log f`` in nats, integrated in ``log t`` over ``[lo, hi]``."""
    z, w = _gl_nodes(math.log(lo), math.log(hi), n)
    t = np.exp(z)
    lp = logpdf(t)
    f = np.exp(lp)
    return -float(np.sum(w * t * np.where(f > 0, f * lp, 0.0)))


@dataclass(frozen=True)
class GammaMixture:
    weights: tuple
    shapes: tuple
    rates: tuple

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        parts = [math.log(w) + k * math.log(b) + (k - 1.0) * np.log(t) - b * t - log_gamma(k)
                 for w, k, b in zip(self.weights, self.shapes, self.rates)]
        return sp.logsumexp(np.vstack(parts), axis=0)

    @property
    def mean(self) -> float:
        return sum(w * k / b for w, k, b in zip(self.weights, self.shapes, self.rates))

    @property
    def mean_log(self) -> float:
        return sum(w * (digamma(k) - math.log(b)) for w, k, b in zip(self.weights, self.shapes, self.rates))


def constrained_mixtures(c: Constraints, n: int, seed: int, max_tries: int = 10000) -> list[GammaMixture]:
    """Two-component Gamma mixtures with mean ``g0`` and mean log ``g1``.

    The weight and both shapes are drawn at random.  The component means
    are ``r * m`` and ``m``, with ``m`` fixed by the overall mean; the
    log-moment gap grows monotonically in ``r >= 1`` from its equal-means
    value, so ``r`` is found by bracketing.  Draws whose equal-means gap
    already exceeds the target are rejected.
    """
    from scipy.optimize import brentq

    target = math.log(c.g0) - c.g1
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        p = float(rng.uniform(0.05, 0.95))
        k1, k2 = (float(v) for v in np.exp(rng.uniform(math.log(0.3), math.log(30.0), 2)))

        def rates(r):
            m2 = c.g0 / (p * r + 1.0 - p)
            return k1 / (r * m2), k2 / m2

        def gap(r):
            b1, b2 = rates(r)
            mean_log = p * (digamma(k1) - math.log(b1)) + (1.0 - p) * (digamma(k2) - math.log(b2))
            return math.log(c.g0) - mean_log - target

        if gap(1.0) >= 0:
            continue
        hi = 2.0
        while gap(hi) < 0:
            hi *= 2.0
        r = brentq(gap, 1.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
        b1, b2 = rates(r)
        mix = GammaMixture((p, 1.0 - p), (k1, k2), (b1, b2))
        if abs(mix.mean - c.g0) > 1e-9 * c.g0 or abs(mix.mean_log - c.g1) > 1e-9:
            continue
        out.append(mix)
        if len(out) == n:
            return out
    raise NumericalError(f"only {len(out)} of {n} constrained mixtures found")


def write_density_csv(rows, path, comment: str | None = None) -> None:
    """Rows of ``(s, lambda_ex_hz, density)``."""
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["s", "lambda_ex_hz", "density"])
        for s, lam, d in rows:
            w.writerow([repr(float(s)), repr(float(lam)), repr(float(d))])
