import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellcycle import (BoundaryMeasure, IntervalResolvent, NotInvertible, interval_psi_lambda,
                       interval_psi_psi, interval_resolvent)
from cellcycle.interval import interval_residuals, scalar_neumann

sin_pi = lambda x: np.sin(np.pi * x)  # noqa: E731


def exact_sin_delta0(lam, x):
    """Closed-form resolvent for f = sin(pi x) and mu = delta_0."""
    d = lam**2 + np.pi**2
    u0 = (np.pi * np.exp(lam * (x - 1)) + lam * np.sin(np.pi * x) + np.pi * np.cos(np.pi * x)) / d
    u0_at_0 = np.pi * (math.exp(-lam) + 1) / d
    return u0 + np.exp(lam * (x - 1)) * u0_at_0 / (1 - math.exp(-lam))


def test_psi_lambda_examples():
    assert interval_psi_lambda(1.0, 1.0, 1.0) == 1.0
    assert interval_psi_lambda(2.0, 1.0, 0.0) == pytest.approx(2 * math.exp(-1), rel=1e-15)
    assert interval_psi_lambda(3.7, 2.5, np.linspace(0, 1, 11))[-1] == 3.7
    with pytest.raises(ValueError):
        interval_psi_lambda(1.0, 0.0, 0.5)


def test_psi_psi_examples():
    for lam in (0.1, 1.0, 7.0):
        assert interval_psi_psi(BoundaryMeasure.delta(1.0), lam) == 1.0
    assert interval_psi_psi(BoundaryMeasure.uniform(), 1.0) == pytest.approx(1 - math.exp(-1),
                                                                            abs=1e-12)
    assert interval_psi_psi(BoundaryMeasure.delta(0.0), 1.0) == pytest.approx(math.exp(-1),
                                                                            rel=1e-15)


def test_measure_validation_and_config():
    with pytest.raises(ValueError):
        BoundaryMeasure.delta(1.5)
    with pytest.raises(ValueError):
        BoundaryMeasure(ac_x=(0.0, 1.0), ac_density=(1.0,))
    mixed = BoundaryMeasure.from_config({"kind": "mixed", "atoms": [{"at": 0.0, "weight": 0.5}],
                                         "x": [0.0, 1.0], "density": [0.5, 0.5]})
    assert mixed.total_mass == pytest.approx(1.0)
    assert BoundaryMeasure.from_config({"kind": "delta", "at": 1.0}).is_delta_one()
    assert not BoundaryMeasure.uniform().is_delta_one()


def test_zero_input_gives_zero():
    u = interval_resolvent(lambda x: np.zeros_like(x), 1.0, BoundaryMeasure.uniform())
    assert np.all(u == 0.0)


def test_delta_one_not_invertible():
    for lam in (0.5, 1.0, 2.0):
        with pytest.raises(NotInvertible):
            interval_resolvent(sin_pi, lam, BoundaryMeasure.delta(1.0))


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_closed_form_delta0(lam):
    x = np.linspace(0.0, 1.0, 10_000)
    u = interval_resolvent(sin_pi, lam, BoundaryMeasure.delta(0.0), x)
    assert np.max(np.abs(u - exact_sin_delta0(lam, x))) < 1e-12


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_constant_input_uniform_measure(lam):
    # u = 1/lam solves lam u - u' = 1 and u(1) = int u dx
    x = np.linspace(0.0, 1.0, 1001)
    u = interval_resolvent(lambda s: np.ones_like(s), lam, BoundaryMeasure.uniform(), x)
    assert np.max(np.abs(u - 1 / lam)) < 1e-13


@pytest.mark.parametrize("mu", [BoundaryMeasure.delta(0.0), BoundaryMeasure.uniform()])
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_residuals(mu, lam):
    r = interval_residuals(sin_pi, lam, mu)
    assert r["equation"] < 1e-8 and r["boundary"] < 1e-8


def test_pointwise_matches_grid():
    res = IntervalResolvent(sin_pi, 1.3, BoundaryMeasure.uniform())
    x = np.linspace(0.0, 1.0, 257)
    assert np.allclose(res(x), res.on_grid(x), rtol=0, atol=1e-14)
    with pytest.raises(ValueError):
        res.on_grid(np.linspace(0.0, 0.9, 10))


def test_tabulated_input():
    xs = np.linspace(0.0, 1.0, 401)
    u_tab = interval_resolvent((xs, np.sin(np.pi * xs)), 1.0, BoundaryMeasure.delta(0.0), xs)
    assert np.max(np.abs(u_tab - exact_sin_delta0(1.0, xs))) < 1e-8


def test_resolvent_identity():
    lam, mu2 = 0.7, 1.9
    mu = BoundaryMeasure.uniform()
    x = np.linspace(0.0, 1.0, 2001)
    r_mu = IntervalResolvent(sin_pi, mu2, mu)
    lhs = (mu2 - lam) * IntervalResolvent(r_mu, lam, mu).on_grid(x)
    rhs = interval_resolvent(sin_pi, lam, mu, x) - r_mu.on_grid(x)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_scalar_neumann_agreement():
    for lam in (0.5, 1.0, 2.0):
        q = interval_psi_psi(BoundaryMeasure.uniform(), lam)
        assert scalar_neumann(q) == pytest.approx(1 / (1 - q), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 0.99), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_positivity(lam, at, a, b):
    mu = BoundaryMeasure(atoms=((at, 0.5),), ac_x=(0.0, 1.0), ac_density=(0.5, 0.5))
    u = interval_resolvent(lambda s: a + b * s**2, lam, mu, np.linspace(0, 1, 101))
    assert u.min() >= 0
