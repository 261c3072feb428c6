import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special as sp

from syncbpj.errors import DataError, DegenerateDataError, SurfaceFitError
from syncbpj.neuron import IsiSample
from syncbpj.special import digamma
from syncbpj.stats import (
    GammaFit,
    fit_gamma_mle,
    fit_surfaces,
    freedman_diaconis_edges,
    ks_critical_value,
    ks_test_gamma,
    read_surface_table,
    score_residual,
    solve_shape,
    write_fit_table,
    write_surface_table,
)


def _gamma_draws(shape, rate, n, seed):
    return np.random.default_rng(seed).gamma(shape, 1.0 / rate, n)


def test_recovers_shape_two_rate_twenty():
    fit = fit_gamma_mle(IsiSample(_gamma_draws(2.0, 20.0, 100_000, 1)))
    assert 1.95 <= fit.m_gam <= 2.05
    assert 19.5 <= fit.b_gam <= 20.5
    assert fit.n_samples == 100_000


@pytest.mark.parametrize("shape", [0.5, 1.0, 3.0, 10.0])
def test_recovery_within_two_and_a_half_percent(shape):
    fit = fit_gamma_mle(_gamma_draws(shape, 40.0, 100_000, int(shape * 10)))
    assert fit.m_gam == pytest.approx(shape, rel=0.025)
    assert fit.b_gam == pytest.approx(40.0, rel=0.025)


def test_exponential_shape_within_three_se():
    x = np.random.default_rng(5).exponential(0.05, 20_000)
    fit = fit_gamma_mle(x)
    # asymptotic SE of the shape MLE at k = 1: sqrt(k / (n (k psi'(k) - 1)))
    se = math.sqrt(1.0 / (x.size * (sp.polygamma(1, 1.0) - 1.0)))
    assert abs(fit.m_gam - 1.0) < 3 * se


def test_degenerate_and_invalid_samples():
    with pytest.raises(DegenerateDataError):
        fit_gamma_mle(np.full(50, 0.02))
    with pytest.raises(DataError):
        fit_gamma_mle(np.array([0.1, -0.2, 0.3]))
    with pytest.raises(DataError):
        fit_gamma_mle(np.array([]))


def test_small_sample_warns_but_fits():
    with pytest.warns(RuntimeWarning):
        fit = fit_gamma_mle(_gamma_draws(2.0, 10.0, 10, 3))
    assert fit.m_gam > 0


def test_log_likelihood_matches_scipy():
    x = _gamma_draws(3.0, 15.0, 500, 9)
    fit = fit_gamma_mle(x)
    ref = np.sum(sp.xlogy(fit.m_gam - 1, x) - fit.b_gam * x + fit.m_gam * math.log(fit.b_gam)
                 - sp.gammaln(fit.m_gam))
    assert fit.log_likelihood == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("target", [1e-6, 0.01, 0.3, 1.0, 5.0, 30.0])
def test_shape_solver_inverts_equation(target):
    k = solve_shape(target)
    assert math.log(k) - digamma(k) == pytest.approx(target, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(shape=st.floats(0.2, 30.0), rate=st.floats(0.5, 500.0), seed=st.integers(0, 2**31))
def test_score_residual_property(shape, rate, seed):
    x = _gamma_draws(shape, rate, 400, seed)
    if np.ptp(x) == 0:
        return
    fit = fit_gamma_mle(x)
    assert abs(score_residual(x, fit)) < 1e-10
    assert fit.b_gam == pytest.approx(fit.m_gam / x.mean(), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(shape=st.floats(0.3, 20.0), seed=st.integers(0, 2**31))
def test_fitted_cdf_monotone_on_sorted_sample(shape, seed):
    x = np.sort(_gamma_draws(shape, 30.0, 300, seed))
    f = fit_gamma_mle(x).cdf(x)
    assert np.all(np.diff(f) >= 0)
    assert np.all((f >= 0) & (f <= 1))


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scale_equivariance(c):
    x = _gamma_draws(2.5, 25.0, 5000, 4)
    a, b = fit_gamma_mle(x), fit_gamma_mle(c * x)
    assert b.m_gam == pytest.approx(a.m_gam, rel=1e-10)
    assert b.b_gam == pytest.approx(a.b_gam / c, rel=1e-10)


def test_ks_calibration_on_own_model():
    passes = 0
    for seed in range(100):
        x = _gamma_draws(2.0, 20.0, 10_000, 1000 + seed)
        passes += ks_test_gamma(x, fit_gamma_mle(x)).passed
    assert passes >= 90


def test_ks_statistic_matches_scipy_route():
    from scipy import stats as ss

    x = _gamma_draws(1.7, 12.0, 2000, 2)
    fit = fit_gamma_mle(x)
    ref = ss.kstest(x, lambda t: sp.gammainc(fit.m_gam, fit.b_gam * t)).statistic
    assert ks_test_gamma(x, fit).statistic == pytest.approx(ref, abs=1e-14)


def test_ks_rejects_gross_mismatch():
    x = np.random.default_rng(0).uniform(0.0, 1.0, 2000)
    x = x[x > 0]
    res = ks_test_gamma(x, GammaFit(10.0, 10.0, x.size, 0.0))
    assert not res.passed


def test_ks_single_sample_boundary():
    res = ks_test_gamma(np.array([0.3]), GammaFit(2.0, 10.0, 1, 0.0))
    assert 0.0 <= res.statistic <= 1.0
    assert res.n == 1


def test_ks_critical_value_constant():
    assert ks_critical_value(100, 0.05) == pytest.approx(0.13581)
    assert ks_test_gamma(np.array([0.1, 0.2]), GammaFit(2.0, 10.0, 2, 0.0)).critical_value == \
        pytest.approx(1.3581 / math.sqrt(2))


def _fits_from(lam, rate_fn, shape_fn):
    return [(l, GammaFit(float(shape_fn(l)), float(rate_fn(l)), 1000, 0.0)) for l in lam]


def test_surfaces_recover_exact_polynomials():
    lam = np.array([20.0, 25.0, 30.0, 36.0991, 45.0, 55.0])
    c = fit_surfaces(_fits_from(lam, lambda l: 0.3 * l + 5, lambda l: 0.001 * l**2 - 0.02 * l + 3), s=0.3)
    assert c.d1_b == pytest.approx(0.3, abs=1e-10)
    assert c.d0_b == pytest.approx(5.0, abs=1e-10)
    assert c.d2_m == pytest.approx(0.001, abs=1e-10)
    assert c.d1_m == pytest.approx(-0.02, abs=1e-10)
    assert c.d0_m == pytest.approx(3.0, abs=1e-10)
    assert c.residual_b < 1e-18 and c.residual_m < 1e-18
    assert c.s == 0.3 and c.slope_ok


def test_surface_reconstruction_matches_ols_predictions():
    rng = np.random.default_rng(3)
    lam = np.array([20.0, 25.0, 30.0, 36.0991, 45.0, 55.0])
    fits = _fits_from(lam, lambda l: 0.4 * l + 2 + rng.normal(0, 0.5),
                      lambda l: 2.0 + 0.01 * l + rng.normal(0, 0.1))
    c = fit_surfaces(fits)
    b = np.array([f.b_gam for _, f in fits])
    m = np.array([f.m_gam for _, f in fits])
    coef_b = np.polyfit(lam, b, 1)
    coef_m = np.polyfit(lam, m, 2)
    assert np.allclose(c.rate(lam), np.polyval(coef_b, lam), atol=1e-10)
    assert np.allclose(c.shape(lam), np.polyval(coef_m, lam), atol=1e-10)


def test_noisy_surface_is_least_squares_optimal():
    rng = np.random.default_rng(8)
    lam = np.linspace(15, 60, 9)
    fits = _fits_from(lam, lambda l: 0.3 * l + 5 + rng.normal(0, 1),
                      lambda l: 0.001 * l**2 - 0.02 * l + 3 + rng.normal(0, 0.05))
    c = fit_surfaces(fits)
    b = np.array([f.b_gam for _, f in fits])
    m = np.array([f.m_gam for _, f in fits])
    for sign in (-1, 1):
        for i in range(2):
            p = np.array([c.d1_b, c.d0_b])
            p[i] *= 1 + 0.1 * sign
            assert c.residual_b <= np.sum((p[0] * lam + p[1] - b) ** 2)
        for i in range(3):
            q = np.array([c.d2_m, c.d1_m, c.d0_m])
            q[i] *= 1 + 0.1 * sign
            assert c.residual_m <= np.sum((np.polyval(q, lam) - m) ** 2)


def test_surface_fit_needs_three_distinct_rates():
    fit = GammaFit(2.0, 20.0, 100, 0.0)
    with pytest.raises(SurfaceFitError):
        fit_surfaces([(20.0, fit), (20.0, fit), (30.0, fit), (30.0, fit)])


def test_negative_slope_is_stored_and_flagged(caplog):
    lam = np.array([20.0, 30.0, 40.0])
    c = fit_surfaces(_fits_from(lam, lambda l: 50 - 0.5 * l, lambda l: 2.0 + 0 * l))
    assert not c.slope_ok
    assert c.d1_b == pytest.approx(-0.5)
    assert "not positive" in caplog.text


def test_freedman_diaconis_width():
    x = np.random.default_rng(1).normal(size=1000)
    edges = freedman_diaconis_edges(x)
    q75, q25 = np.percentile(x, [75, 25])
    width = 2 * (q75 - q25) / 10.0
    assert edges[0] == x.min() and edges[-1] == x.max()
    assert np.diff(edges)[0] <= width
    assert np.diff(edges)[0] > width * (1 - 1.0 / (edges.size - 1))


def test_tables_round_trip(tmp_path):
    lam = np.array([20.0, 30.0, 40.0, 50.0])
    c = fit_surfaces(_fits_from(lam, lambda l: 0.3 * l + 5, lambda l: 2 + 0.01 * l), s=0.1)
    write_surface_table([c], tmp_path / "s.csv", "syncbpj test")
    back = read_surface_table(tmp_path / "s.csv")
    assert back[0].to_row() == c.to_row()
    fit = GammaFit(2.0, 20.0, 10, -1.0)
    ks = ks_test_gamma(np.array([0.05, 0.1]), fit)
    write_fit_table([(0.1, 30.0, fit, ks)], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "s,lambda_ex_hz,m_gam,b_gam,ks_stat,ks_pass,n"
    (tmp_path / "e.csv").write_text("# nothing\n")
    with pytest.raises(DataError):
        read_surface_table(tmp_path / "e.csv")
