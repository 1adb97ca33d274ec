import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from loggas.equilibrium import (EnergyReport, cached_equilibrium, free_entropy,
                                interval_cell_kernel, project_simplex, rate_functional,
                                solve_equilibrium, unit_cell_constant, weighted_energy)
from loggas.measures import GridMeasure, Rectangle, arcsine, empirical, moments, uniform
from loggas.vdm import WeightFunction

I = Rectangle(-1.0, 1.0)
U = WeightFunction.unit(I)
LOG2 = math.log(2)


def arcsine_cdf(x):
    return 0.5 + math.asin(max(-1.0, min(1.0, x))) / math.pi


def uniform_entropy_oracle():
    # inner integral of log|x - y| over y in [-1, 1] in closed form
    def inner(x):
        a, b = 1 - x, 1 + x
        return (a * math.log(a) if a > 0 else 0) + (b * math.log(b) if b > 0 else 0) - 2
    return quad(inner, -1, 1, epsabs=1e-13)[0] / 4


@pytest.fixture(scope="module")
def eq512():
    return solve_equilibrium(I, U, 512)


# -- free entropy ------------------------------------------------------------------

def test_atoms_have_infinite_energy():
    assert free_entropy(empirical([0.0, 1.0])) == -math.inf
    assert free_entropy(arcsine(64), literal=True) == -math.inf


def test_arcsine_entropy():
    assert free_entropy(arcsine(1024)) == pytest.approx(-LOG2, abs=0.01)


def test_arcsine_entropy_cauchy_convergence():
    vals = [free_entropy(arcsine(n)) for n in (128, 256, 512, 1024)]
    steps = np.abs(np.diff(vals))
    assert np.all(steps[1:] < steps[:-1])
    assert steps[-1] < 2e-3


def test_scaling_adds_log_s():
    s = 0.5
    base = free_entropy(arcsine(1024))
    scaled = free_entropy(arcsine(1024, -s, s))
    assert scaled - base == pytest.approx(math.log(s), abs=0.01)


def test_uniform_entropy_against_quadrature():
    oracle = uniform_entropy_oracle()
    assert oracle == pytest.approx(LOG2 - 1.5, abs=1e-10)
    assert free_entropy(uniform(I, 512)) == pytest.approx(oracle, abs=1e-3)


def test_interval_cell_kernel_diagonal():
    x = np.array([0.0, 0.3])
    h = np.array([0.1, 0.2])
    K = interval_cell_kernel(x, h)
    assert K[0, 0] == pytest.approx(math.log(0.1) - 1.5)
    pair = quad(lambda s: quad(lambda t: math.log(abs(s - t)), 0.2, 0.4)[0], -0.05, 0.05)[0]
    assert K[0, 1] == pytest.approx(pair / (0.1 * 0.2), abs=1e-10)


def test_unit_cell_constant_against_sampling():
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 1, (2, 2_000_000))
    t = rng.uniform(0, 1, (2, 2_000_000))
    mc = float(np.mean(0.5 * np.log((s[0] - t[0]) ** 2 + (s[1] - t[1]) ** 2)))
    assert unit_cell_constant(1.0) == pytest.approx(mc, abs=3e-3)


def test_square_uniform_entropy_scales():
    R = Rectangle(-1, 1, -1, 1)
    a = free_entropy(uniform(R, 400))
    b = free_entropy(uniform(Rectangle(-0.5, 0.5, -0.5, 0.5), 400))
    assert b - a == pytest.approx(math.log(0.5), abs=1e-10)


# -- weighted energy ----------------------------------------------------------------

def test_weighted_energy_unit_weight():
    m = arcsine(512)
    rep = weighted_energy(m, U)
    assert rep.weighted_energy == -rep.sigma and rep.external_term == 0.0
    assert rep.weighted_energy == pytest.approx(LOG2, abs=0.01)


def test_external_term_is_twice_second_moment():
    m = uniform(I, 256)
    rep = weighted_energy(m, WeightFunction.exp_poly(I, {(2, 0): 1.0}))
    assert rep.external_term == pytest.approx(2 * moments(m, 2)[(2, 0)], abs=1e-14)


def test_energy_report_identity_is_enforced():
    with pytest.raises(ValueError):
        EnergyReport(sigma=-1.0, weighted_energy=5.0, external_term=0.0)


# -- equilibrium solver -------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_simplex_projection_is_feasible_and_optimal(v):
    v = np.array(v)
    p = project_simplex(v)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)
    # KKT: v - p = theta on the support and <= theta off it
    r = v - p
    theta = r[p > 0].mean()
    assert np.allclose(r[p > 0], theta, atol=1e-9)
    assert np.all(r[p == 0] <= theta + 1e-9)


def test_unit_weight_equilibrium_is_arcsine(eq512):
    assert eq512.converged
    m = eq512.measure
    left = m.masses[m.nodes.real <= -0.9].sum()
    assert left == pytest.approx(arcsine_cdf(-0.9), abs=0.01)
    assert eq512.energy.weighted_energy == pytest.approx(LOG2, abs=0.01)
    assert eq512.energy.log_delta_w == -eq512.energy.weighted_energy
    cum = np.cumsum(m.masses)
    for q in np.arange(1, 10) / 10:
        x = m.nodes.real[np.searchsorted(cum, q)]
        assert arcsine_cdf(x) == pytest.approx(q, abs=0.01)


def test_gaussian_weight_gives_semicircle():
    R = Rectangle(-2.0, 2.0)
    w = WeightFunction.exp_poly(R, {(2, 0): 1.0})
    res = solve_equilibrium(R, w, 512)
    m = res.measure
    x, h = m.nodes.real, m.cells[0]
    supp = x[m.masses > 1e-10]
    assert supp.min() > -1.05 and supp.max() < 1.05
    assert supp.min() == pytest.approx(-supp.max(), abs=h[0])
    dens = m.masses / h
    semicircle = (2 / math.pi) * np.sqrt(np.clip(1 - x ** 2, 0, None))
    assert np.max(np.abs(dens - semicircle)) < 0.05
    assert res.energy.weighted_energy == pytest.approx(0.75 + LOG2, abs=0.01)


def test_tiny_budget_reports_non_convergence():
    res = solve_equilibrium(I, U, 64, max_iter=3)
    assert not res.converged
    with pytest.raises(ValueError):
        solve_equilibrium(I, U, 8)


def test_cached_equilibrium_is_reused():
    a = cached_equilibrium(I, U, 128)
    assert cached_equilibrium(I, U, 128) is a


# -- rate functional ----------------------------------------------------------------

def test_rate_vanishes_at_equilibrium():
    eq = cached_equilibrium(I, U, 512)
    assert abs(rate_functional(eq.measure, U, I).value) <= 1e-8


def test_rate_positive_off_equilibrium():
    eq = cached_equilibrium(I, U, 512).measure
    masses = 0.95 * eq.masses
    masses[-1] += 0.05
    moved = eq.with_masses(masses)
    assert rate_functional(moved, U, I).value > 0


def test_rate_of_uniform():
    # I_w(uniform) - I_w(arcsine) = -Σ(uniform) - log 2
    expected = -uniform_entropy_oracle() - LOG2
    assert expected == pytest.approx(1.5 - 2 * LOG2, abs=1e-10)
    assert rate_functional(uniform(I, 512), U, I).value == pytest.approx(expected, abs=0.01)
