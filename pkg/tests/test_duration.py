import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cellcycle import DurationModel, NegativeAge, SurvivalExhausted
from cellcycle.rng import CellStream, FixedStream

expo2 = DurationModel.exponential(2.0)
unif = DurationModel.uniform(0.0, 1.0)
gam = DurationModel.gamma(2.0, 1.0)
logn = DurationModel.lognormal(0.0, 0.5)


GL_X, GL_W = np.polynomial.legendre.leggauss(8)


def piecewise_integral(fn, knots):
    """Gauss-Legendre on every knot interval; exact for piecewise-linear data."""
    lo, hi = knots[:-1, None], knots[1:, None]
    x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * GL_X
    return float((fn(x) * GL_W * 0.5 * (hi - lo)).sum())


def tabulated_gamma():
    a = np.linspace(0.0, 30.0, 3001)
    return DurationModel.tabulated(a, stats.gamma(2.0).pdf(a))


def test_survival_examples():
    assert expo2.survival(1.0) == pytest.approx(math.exp(-2.0))
    for d in (expo2, unif, gam, logn, tabulated_gamma()):
        assert d.survival(0.0) == pytest.approx(1.0)
    assert unif.survival(0.25) == pytest.approx(0.75)


def test_negative_age():
    with pytest.raises(NegativeAge):
        expo2.survival(-0.1)


def test_hazard_examples():
    assert np.allclose(expo2.hazard_rate(np.array([0.0, 0.3, 4.0])), 2.0)
    assert unif.hazard_rate(0.5) == pytest.approx(2.0)
    assert gam.hazard_rate(1.0) == pytest.approx(0.5)


def test_hazard_exhausted():
    with pytest.raises(SurvivalExhausted):
        unif.hazard_rate(1.0)


def test_laplace_examples():
    assert DurationModel.exponential(1.0).laplace(1.0) == pytest.approx(0.5)
    for d in (expo2, unif, gam, logn):
        assert d.laplace(0.0) == 1.0
    assert unif.laplace(1.0) == pytest.approx(1 - math.exp(-1))


def test_laplace_quadrature_oracle():
    for lam in (0.3, 1.0, 2.5):
        for d in (gam, logn):
            ref = integrate.quad(lambda a: d.pdf(a) * math.exp(-lam * a), 0, 60, limit=200)[0]
            assert d.laplace(lam) == pytest.approx(ref, abs=1e-8)
        tab = tabulated_gamma()
        ref = piecewise_integral(lambda a: tab.pdf(a) * np.exp(-lam * a), tab._a)
        assert tab.laplace(lam) == pytest.approx(ref, abs=1e-10)


def test_laplace_decreasing():
    lams = np.linspace(0.0, 5.0, 40)
    for d in (expo2, unif, gam, logn):
        vals = np.array([d.laplace(x) for x in lams])
        assert np.all(np.diff(vals) < 0)
        assert d.laplace(1e-9) == pytest.approx(1.0, abs=1e-8)


def test_mean_examples():
    assert DurationModel.exponential(4.0).mean() == pytest.approx(0.25)
    assert unif.mean() == pytest.approx(0.5)
    assert tabulated_gamma().mean() == pytest.approx(2.0, abs=1e-4)


def test_heavy_tail_mean_flagged():
    a = np.linspace(0.0, 1e5, 200_001)
    psi = 0.5 * (1 + a) ** -1.5
    assert math.isinf(DurationModel.tabulated(a, psi).mean())


def test_density_invariants():
    a = np.linspace(0.01, 3.0, 200)
    for d in (expo2, gam, logn, tabulated_gamma()):
        if d.kind == "tabulated":
            total = piecewise_integral(d.pdf, d._a)
        else:
            total = integrate.quad(d.pdf, 0, float(d._dist.isf(1e-16)), limit=400)[0]
        assert total == pytest.approx(1.0, abs=1e-8)
        assert np.all(np.diff(d.survival(a)) <= 0)
        rho = d.hazard_rate(a)
        assert np.allclose(rho * d.survival(a), d.pdf(a), atol=1e-8)


def test_survival_hazard_consistency():
    for d in (gam, logn):
        for a in (0.2, 1.0, 2.5):
            cum = integrate.quad(lambda r: d.hazard_rate(r), 0, a)[0]
            assert d.survival(a) == pytest.approx(math.exp(-cum), abs=1e-6)


def test_tabulated_survival_consistency():
    tab = tabulated_gamma()
    for a in (0.5, 2.0, 7.0):
        knots = np.concatenate([[a], tab._a[tab._a > a]])
        tail = piecewise_integral(tab.pdf, knots)
        assert tab.survival(a) == pytest.approx(tail, abs=1e-9)


def test_pinned_samples():
    # inverse CDF: T = F^{-1}(u)
    assert unif.sample(FixedStream([0.25])) == pytest.approx(0.25)
    u = 0.3
    assert expo2.sample(FixedStream([u])) == pytest.approx(-math.log(1 - u) / 2.0)
    # -ln(u)/p is the same law read through the survival function
    assert expo2.inverse_survival(u) == pytest.approx(-math.log(u) / 2.0)


@pytest.mark.parametrize("model", [expo2, gam, logn, unif, tabulated_gamma()],
                         ids=["exp", "gamma", "lognormal", "uniform", "tabulated"])
def test_sampler_ks(model):
    x = model.sample(CellStream(5, 0), size=100_000)
    assert stats.kstest(x, model.cdf).statistic < 0.01


def test_exponential_sample_mean():
    n = 1_000_000
    x = expo2.sample(CellStream(9, 1), size=n)
    se = 0.5 / math.sqrt(n)
    assert abs(x.mean() - 0.5) < 3 * se


def test_residual_given_age():
    # memoryless: the residual of an exponential is exponential again
    u = np.linspace(0.01, 0.99, 11)
    assert np.allclose(expo2.residual_given_age(3.0, u), expo2.quantile(u))
    # uniform [0, 1] at age 0.5: residual uniform on [0, 0.5]
    assert unif.residual_given_age(0.5, 0.5) == pytest.approx(0.25)


def test_generation_time_density():
    assert expo2.generation_time_density(0.5, 0.3) == 0.0
    assert DurationModel.exponential(1.0).generation_time_density(1.0, 2.0) == pytest.approx(math.exp(-1))
    assert unif.generation_time_density(0.5, 1.0) == pytest.approx(1.0)
    assert gam.generation_time_cdf(0.4, 0.4) == 0.0


def test_binned_laplace_sums_to_laplace():
    edges = np.concatenate([[0.0], np.arange(0.5, 40, 1.0) / 32, [np.inf]])
    for d in (expo2, gam, logn, unif):
        assert d.binned_laplace(edges, 0.7).sum() == pytest.approx(d.laplace(0.7), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True))
def test_quantile_inverts_cdf(u):
    for d in (expo2, gam, tabulated_gamma()):
        assert d.cdf(d.quantile(u)) == pytest.approx(u, abs=1e-9)
