import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellcycle import (BoundaryDensity, CharGrid, GridMismatch, GrowthModel, OutOfRange,
                       StateDensity, from_physical, gaussian_bump, halve_size_pushforward,
                       read_state_csv, to_physical, write_state_csv)
from cellcycle.grid import boundary_bump, boundary_l1, deposit, l1_norm

const1 = GrowthModel.constant(1.0)
lin = GrowthModel.linear(1.0, 1.0)


def grid(h=1 / 64, T_B=0.25, growth=const1, s=(0.0, 8.0), a_max=4.0):
    return CharGrid.build(growth, T_B, h, a_max, *s)


def test_snapping_keeps_t_b_on_grid():
    g = CharGrid.build(const1, 0.2, 1 / 256, 10, 0, 12)
    assert g.nb * g.h == pytest.approx(0.2)
    assert g.h == pytest.approx(1 / 255)
    assert g.h_requested == pytest.approx(1 / 256)
    assert g.describe()["nb"] == 51


def test_s_min_below_q0_rejected():
    with pytest.raises(OutOfRange):
        CharGrid.build(const1, 0.2, 0.05, 2, -1.0, 3.0)


def test_l1_norm_examples():
    g = grid()
    assert StateDensity.zeros(g).l1_norm() == 0.0
    f = StateDensity.zeros(g)
    f.f1[3, 10] = 2.5
    assert l1_norm(f) == pytest.approx(2.5 * g.h**2)
    ge = CharGrid.build(const1, 0.0, 0.01, 1.0, 0.0, 20.0)
    b = BoundaryDensity(ge, np.exp(-ge.labels), np.zeros(ge.ns))
    assert b.l1_norm() == pytest.approx(1.0, abs=1e-3)


def test_negative_entries_rejected():
    g = grid()
    f1 = np.zeros((g.na, g.ns))
    f1[0, 0] = -1.0
    with pytest.raises(ValueError):
        StateDensity(g, f1, np.zeros((g.nb, g.ns)))


def test_grid_mismatch():
    a = StateDensity.zeros(grid())
    b = StateDensity.zeros(grid(h=1 / 32))
    with pytest.raises(GridMismatch):
        a + b


def test_to_physical_constant_growth_is_identity():
    g = grid()
    f = gaussian_bump(g, 1.0, 3.0, 0.4)
    i, j = 40, 150
    assert to_physical(f, g.ages[i], g.s_nodes[j]) == pytest.approx(f.f1[i, j])


def test_to_physical_linear_growth_jacobian():
    g = grid(growth=lin, s=(-2.0, 4.0))
    f = gaussian_bump(g, 1.0, 1.5, 0.4)
    i, j = 50, 200
    x = math.exp(g.s_nodes[j])
    assert to_physical(f, g.ages[i], x) == pytest.approx(f.f1[i, j] / x)


def test_to_physical_out_of_range():
    g = grid()
    f = gaussian_bump(g, 1.0, 3.0, 0.4)
    with pytest.raises(OutOfRange):
        to_physical(f, 1.0, 50.0)


def test_interpolation_order():
    def density(a, x):
        return np.exp(-((a - 1.0) ** 2 + (np.log(x) - 1.0) ** 2) / 0.5)

    rng = np.random.default_rng(0)
    pts_a = rng.uniform(0.5, 1.5, 2000)
    pts_x = np.exp(rng.uniform(0.5, 1.5, 2000))
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64, 1 / 128):
        g = grid(h=h, growth=lin, s=(-2.0, 4.0), T_B=0.25)
        f = from_physical(g, density)
        errs.append(np.mean(np.abs(to_physical(f, pts_a, pts_x) - density(pts_a, pts_x))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_halve_constant_growth_doubles_density():
    g = grid(h=1 / 128, s=(0.0, 10.0), T_B=0.25)
    b = boundary_bump(g, 6.0, 0.4)
    out = halve_size_pushforward(g, b)
    assert boundary_l1(g, out) == pytest.approx(boundary_l1(g, b), abs=1e-10)
    # s -> s/2: density 2 phi(2 s)
    expected = 2 * np.interp(2 * g.labels, g.labels, b)
    assert np.max(np.abs(out - expected)) < 0.02 * out.max()
    c = g.labels
    assert (out * c).sum() / out.sum() == pytest.approx(3.0, abs=1e-9)


def test_halve_linear_growth_is_shift():
    g = grid(h=1 / 128, growth=lin, s=(-3.0, 5.0))
    b = boundary_bump(g, 2.0, 0.3)
    out = halve_size_pushforward(g, b)
    c = g.labels
    assert boundary_l1(g, out) == pytest.approx(boundary_l1(g, b), abs=1e-10)
    mean_in = (b * c).sum() / b.sum()
    mean_out = (out * c).sum() / out.sum()
    assert mean_out == pytest.approx(mean_in - math.log(2), abs=1e-9)


def test_deposit_books_lost_mass():
    g = grid()
    out, lo, hi = deposit(g, np.array([-5.0, 3.0, 100.0]), np.array([1.0, 2.0, 3.0]))
    assert lo == 1.0 and hi == 3.0
    assert out.sum() == pytest.approx(2.0)


def test_csv_round_trip(tmp_path):
    g = grid(growth=lin, s=(-2.0, 4.0))
    f = gaussian_bump(g, 1.0, 1.0, 0.3) + gaussian_bump(g, 0.1, 1.2, 0.05, phase=2)
    path = tmp_path / "state.csv"
    write_state_csv(f, path)
    assert path.read_text().splitlines()[0] == "a,s,x,f1,f2"
    back = read_state_csv(path, g)
    assert np.array_equal(back.f1, f.f1) and np.array_equal(back.f2, f.f2)


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_state_csv(path, grid())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=4, max_size=4),
       st.floats(0.5, 7.5), st.floats(0.05, 1.0))
def test_positivity_and_mass_closure(weights, s0, sigma):
    g = grid(h=1 / 32, s=(0.0, 16.0))
    b = boundary_bump(g, s0, sigma) * (1 + weights[0])
    out, lo, hi = halve_size_pushforward(g, b, return_lost=True)
    assert out.min() >= 0.0
    assert boundary_l1(g, out) + (lo + hi) * g.h == pytest.approx(boundary_l1(g, b), rel=1e-12)
