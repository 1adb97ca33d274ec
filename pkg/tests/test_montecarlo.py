import json
import math

import numpy as np
import pytest

from loggas.errors import DensityConditionError
from loggas.measures import MomentNeighborhood, Rectangle, arcsine
from loggas.montecarlo import (BaseMeasure, McOptions, bm_ratio, log_J, log_prob, log_Z,
                               sandwich_bounds, weighted_norms)
from loggas.vdm import WeightFunction

I = Rectangle(-1.0, 1.0)
SQ = Rectangle(-1.0, 1.0, -1.0, 1.0)
U = WeightFunction.unit(I)
LEB = BaseMeasure.lebesgue(I)
THERMO = McOptions(method="thermodynamic")


def mean_window(eps):
    return MomentNeighborhood({(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0}, 1, eps)


def window_J_closed_form(eps):
    # ∫∫_{|x+y| < 2 eps} (x - y)² over [-1, 1]²; u = x + y, v = x - y
    c = 2 * eps
    return (2 / 3) * (16 - (2 - c) ** 4) / 4


# -- base measures -------------------------------------------------------------------

def test_lebesgue_disc_masses():
    assert LEB.mass == 2.0
    assert LEB.disc_mass(-1.0, 0.3) == pytest.approx(0.3)
    assert LEB.disc_mass(0.0, 0.3) == pytest.approx(0.6)
    sq = BaseMeasure.lebesgue(SQ)
    assert sq.disc_mass(0j, 0.4) == pytest.approx(math.pi * 0.16, rel=1e-10)
    assert sq.disc_mass(-1 - 1j, 0.4) == pytest.approx(math.pi * 0.04, rel=1e-10)
    assert sq.disc_mass(-1 + 0j, 0.4) == pytest.approx(math.pi * 0.08, rel=1e-10)


def test_density_condition_violation_is_reported():
    with pytest.raises(DensityConditionError):
        BaseMeasure.density_grid(I, [1.0, 0.0])
    tau = BaseMeasure.density_grid(I, [1.0, 0.0], validate=False)
    assert tau.mass == pytest.approx(1.0)


def test_base_measure_json_roundtrip():
    tau = BaseMeasure.density_grid(SQ, [[1.0, 2.0], [0.5, 1.5]])
    back = BaseMeasure.from_json_dict(json.loads(json.dumps(tau.to_json_dict())))
    assert np.array_equal(back.values, tau.values) and back.T == tau.T and back.r0 == tau.r0


def test_base_quadrature_and_sampling():
    tau = BaseMeasure.density_grid(I, [1.0, 3.0])
    z, w = tau.quadrature(8)
    assert np.dot(w, z.real ** 2) == pytest.approx(1 / 3 + 1.0)  # ∫x² on each half
    rng = np.random.default_rng(0)
    s = tau.sample(rng, 40000)
    assert np.mean(s.real > 0) == pytest.approx(0.75, abs=0.01)
    assert np.all(I.contains(s))


def test_options_validation():
    with pytest.raises(ValueError):
        McOptions(walkers=63, threads=2)
    with pytest.raises(ValueError):
        McOptions(beta_points=4)


# -- partition functions -------------------------------------------------------------

def test_two_point_partition_function_is_exact():
    est = log_Z(I, U, LEB, 2)
    assert est.method == "quadrature"
    assert est.value == pytest.approx(math.log(8 / 3), abs=1e-10)


def test_three_point_partition_function_from_selberg():
    # Selberg integral on [0, 1]^n with exponents a - 1 = b - 1 = 0, mapped to [-1, 1]
    n, a, b, c = 3, 1.0, 1.0, 1.0
    log_s = sum(math.lgamma(a + j * c) + math.lgamma(b + j * c) + math.lgamma(1 + (j + 1) * c)
                - math.lgamma(a + b + (n + j - 1) * c) - math.lgamma(1 + c) for j in range(n))
    log_s += (n + n * (n - 1)) * math.log(2)  # affine map [0,1] -> [-1,1]
    assert log_Z(I, U, LEB, 3).value == pytest.approx(log_s, abs=1e-8)


@pytest.mark.parametrize("d", [2, 3])
def test_thermodynamic_matches_quadrature(d):
    exact = log_Z(I, U, LEB, d).value
    est = log_Z(I, U, LEB, d, seed=1, opts=THERMO)
    assert est.method == "thermodynamic" and est.std_error > 0
    assert abs(est.value - exact) <= 3 * est.std_error


def test_zero_temperature_endpoint_is_base_mass():
    # at β = 0 the integrand is 1, so the path starts from d log τ(H)
    est = log_Z(I, U, LEB, 4, seed=0, opts=McOptions(method="thermodynamic", walkers=16,
                                                     burn_in=20, sweeps=20, beta_points=5))
    assert est.diagnostics["log_base"] == pytest.approx(4 * math.log(2.0), abs=1e-14)


def test_same_seed_same_estimate():
    opts = McOptions(method="thermodynamic", walkers=16, burn_in=10, sweeps=20, beta_points=5)
    a = log_Z(I, U, LEB, 4, seed=3, opts=opts)
    b = log_Z(I, U, LEB, 4, seed=3, opts=opts)
    assert a.value == b.value and a.std_error == b.std_error


# -- constrained integrals ----------------------------------------------------------

def test_window_integral_quadrature():
    est = log_J(I, U, LEB, mean_window(0.1), 2)
    assert est.value == pytest.approx(math.log(window_J_closed_form(0.1)), abs=1e-4)


def test_window_integral_thermodynamic():
    exact = math.log(window_J_closed_form(0.1))
    est = log_J(I, U, LEB, mean_window(0.1), 2, seed=2, opts=THERMO)
    assert abs(est.value - exact) <= 3 * est.std_error


def test_inactive_constraint_gives_full_integral():
    nb = mean_window(1e6)
    assert log_J(I, U, LEB, nb, 3).value == pytest.approx(log_Z(I, U, LEB, 3).value, abs=1e-10)
    assert log_prob(I, U, LEB, nb, 3).value == pytest.approx(0.0, abs=1e-10)
    est = log_prob(I, U, LEB, nb, 3, seed=0, opts=THERMO)
    assert abs(est.value) <= max(3 * est.std_error, 1e-12)


def test_generous_window_around_equilibrium_has_probability_near_one():
    nb = MomentNeighborhood.around(arcsine(1024), 2, 0.5)
    est = log_prob(I, U, LEB, nb, 3)
    assert -0.1 < est.value <= 0.0


def test_sandwich_brackets_exact_integral():
    nb = MomentNeighborhood.around(arcsine(1024), 1, 0.2)
    d = 3
    exact = log_J(I, U, LEB, nb, d).value / d ** 2
    sb = sandwich_bounds(I, U, LEB, nb, d)
    assert sb.lower <= exact <= sb.upper


# -- Bernstein-Markov ratios ---------------------------------------------------------

def test_constant_polynomial_ratio():
    sup, l2 = weighted_norms(I, U, LEB, 1, np.array([1.0, 0.0]))
    assert sup / l2 == pytest.approx(1 / math.sqrt(2))


def test_unit_weight_ratios_grow_subexponentially():
    rows = bm_ratio(I, U, LEB, [20, 30, 40], trials=50)
    assert all(r.root <= 1.1 for r in rows)


def test_one_sided_base_measure_breaks_the_ratio():
    tau = BaseMeasure.density_grid(I, [1.0, 0.0], validate=False)
    w = WeightFunction.exp_poly(I, {(1, 0): -1.0})
    rows = bm_ratio(I, w, tau, [20, 40], trials=50)
    assert all(r.root > 1.3 for r in rows)


@pytest.mark.parametrize("phi", [U, WeightFunction.exp_poly(I, {(2, 0): 1.0})], ids=["unit", "gauss"])
def test_beta_grid_refinement_stays_within_error(phi):
    a = log_Z(I, phi, LEB, 3, seed=0, opts=THERMO)
    b = log_Z(I, phi, LEB, 3, seed=0, opts=McOptions(method="thermodynamic", beta_points=41))
    assert abs(a.value - b.value) < a.std_error


def test_log_prob_is_log_J_minus_log_Z():
    nb = mean_window(0.1)
    opts = McOptions(method="thermodynamic", walkers=16, burn_in=20, sweeps=40)
    est = log_prob(I, U, LEB, nb, 4, seed=5, opts=opts)
    diff = est.diagnostics["log_J"]["value"] - est.diagnostics["log_Z"]["value"]
    assert est.value == pytest.approx(diff, abs=1e-12)
    assert est.diagnostics["rate_check"] == -est.value / 16
