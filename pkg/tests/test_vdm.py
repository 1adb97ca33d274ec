import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loggas.checks import fd_gradient
from loggas.errors import DomainError, SingularConfigurationError, UnsupportedWeightError
from loggas.measures import Rectangle
from loggas.vdm import (MarkovBoundParams, WeightFunction, batch_log_wvdm, grad_log_wvdm,
                        log_vdm, log_wvdm, markov_constant, markov_lipschitz_bound,
                        perturbation_floor, vdm_markov_params)

I = Rectangle(-1.0, 1.0)
SQ = Rectangle(-1.0, 1.0, -1.0, 1.0)


def brute_vdm_sq(pts, w):
    d = len(pts)
    prod = 1.0
    for i, j in itertools.combinations(range(d), 2):
        prod *= abs(pts[i] - pts[j]) ** 2
    for p in pts:
        prod *= w(p) ** (2 * d)
    return prod


# -- weights -------------------------------------------------------------------------

def test_exp_poly_convention():
    w = WeightFunction.exp_poly(I, {(2, 0): 1.0})
    assert w(0.5) == pytest.approx(math.exp(-0.25))
    assert w.Q(0.5) == pytest.approx(0.25)


def test_poly_and_tabulated_weights():
    w = WeightFunction.poly(I, {(0, 0): 1.0, (2, 0): 0.25})
    assert w(1.0) == pytest.approx(1.25)
    t = WeightFunction.tabulated(I, [-1, 0, 1], [1.0, 2.0, 1.0])
    assert t(0.5) == pytest.approx(1.5)
    assert not t.differentiable


def test_weight_must_be_positive():
    with pytest.raises(ValueError):
        WeightFunction.poly(I, {(1, 0): 1.0})
    with pytest.raises(ValueError):
        WeightFunction.tabulated(I, [-1, 1], [1.0, 0.0])


def test_weight_rejects_points_outside_domain():
    with pytest.raises(DomainError):
        WeightFunction.unit(I).log_w(1.5)
    with pytest.raises(DomainError):
        log_wvdm([0.0, 0.5j], WeightFunction.unit(I))


def test_weight_json_roundtrip():
    for w in (WeightFunction.unit(I), WeightFunction.exp_poly(I, {(2, 0): 1.0}),
              WeightFunction.poly(SQ, {(0, 0): 2.0, (1, 1): 0.5}),
              WeightFunction.tabulated(I, [-1, 0, 1], [1.0, 2.0, 1.0])):
        back = WeightFunction.from_json_dict(json.loads(json.dumps(w.to_json_dict())), w.domain)
        z = np.array([-0.7, 0.1, 0.9])
        assert np.allclose(back.log_w(z), w.log_w(z))
        assert back.key() == w.key()


# -- Vandermonde -------------------------------------------------------------------

def test_log_vdm_examples():
    assert log_vdm([0.0, 1.0]) == 0.0
    roots = np.exp(2j * np.pi * np.arange(3) / 3)
    assert log_vdm(roots) == pytest.approx(1.5 * math.log(3), abs=1e-12)
    assert log_vdm([0.0, 0.0, 1.0]) == -math.inf
    with pytest.raises(ValueError):
        log_vdm([1.0])


def test_log_vdm_large_d_does_not_overflow():
    pts = np.cos(np.pi * np.arange(400) / 399)
    assert math.isfinite(log_vdm(pts))


def test_log_wvdm_examples():
    assert log_wvdm([0.2, -0.4, 0.9], WeightFunction.unit(I)) == log_vdm([0.2, -0.4, 0.9])
    w = WeightFunction.exp_poly(I, {(2, 0): 1.0})
    assert log_wvdm([-1.0, 1.0], w) == pytest.approx(math.log(2) - 4)


@pytest.mark.parametrize("seed", range(5))
def test_log_wvdm_against_direct_product(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, 5) + 1j * rng.uniform(-1, 1, 5)
    w = WeightFunction.exp_poly(SQ, {(2, 0): 0.5, (0, 1): -0.3})
    ref = brute_vdm_sq(pts, lambda z: math.exp(-(0.5 * z.real ** 2 - 0.3 * z.imag)))
    assert math.exp(2 * log_wvdm(pts, w)) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=8, unique=True),
       st.randoms(use_true_random=False))
def test_permutation_invariance(pairs, rnd):
    pts = [complex(a, b) for a, b in pairs]
    if len(set(pts)) < len(pts):
        return
    w = WeightFunction.exp_poly(SQ, {(2, 0): 1.0, (1, 1): 0.2})
    perm = list(pts)
    rnd.shuffle(perm)
    assert log_wvdm(perm, w) == pytest.approx(log_wvdm(pts, w), abs=1e-9)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (7, 6)) + 1j * rng.uniform(-1, 1, (7, 6))
    w = WeightFunction.poly(SQ, {(0, 0): 2.0, (1, 0): 0.5})
    assert np.allclose(batch_log_wvdm(X, w), [log_wvdm(x, w) for x in X], atol=1e-10)


# -- gradient ------------------------------------------------------------------------

def test_gradient_two_points():
    g = grad_log_wvdm([-1.0, 1.0], WeightFunction.unit(I))
    assert np.allclose(g[:, 0], [-0.5, 0.5]) and np.allclose(g[:, 1], 0.0)


@pytest.mark.parametrize("kind", ["unit", "exp_poly", "poly"])
def test_gradient_matches_central_differences(kind):
    rng = np.random.default_rng(11)
    w = {"unit": WeightFunction.unit(SQ),
         "exp_poly": WeightFunction.exp_poly(SQ, {(2, 0): 1.0, (0, 2): 0.5, (1, 1): 0.3}),
         "poly": WeightFunction.poly(SQ, {(0, 0): 3.0, (1, 0): 0.5, (1, 1): 0.4})}[kind]
    for _ in range(10):
        pts = rng.uniform(-0.9, 0.9, 6) + 1j * rng.uniform(-0.9, 0.9, 6)
        assert np.max(np.abs(grad_log_wvdm(pts, w) - fd_gradient(pts, w))) <= 1e-5


def test_gradient_plain_central_difference_step():
    # the plain h = 1e-6 central difference on well separated points
    w = WeightFunction.exp_poly(SQ, {(2, 0): 1.0})
    pts = np.array([-0.6 - 0.2j, 0.1 + 0.5j, 0.7 - 0.4j])
    g = grad_log_wvdm(pts, w)
    h = 1e-6
    for i in range(3):
        for axis, step in ((0, h), (1, 1j * h)):
            p, m = pts.copy(), pts.copy()
            p[i] += step
            m[i] -= step
            assert (log_wvdm(p, w) - log_wvdm(m, w)) / (2 * h) == pytest.approx(g[i, axis], abs=1e-5)


def test_gradient_antisymmetry():
    w = WeightFunction.exp_poly(I, {(2, 0): 1.0, (4, 0): 0.3})
    pts = np.array([-0.7, -0.2, 0.2, 0.7])
    g = grad_log_wvdm(pts, w)[:, 0]
    assert np.allclose(g, -g[::-1], atol=1e-12)


def test_gradient_errors():
    with pytest.raises(SingularConfigurationError):
        grad_log_wvdm([0.1, 0.1], WeightFunction.unit(I))
    with pytest.raises(UnsupportedWeightError):
        grad_log_wvdm([0.1, 0.2], WeightFunction.tabulated(I, [-1, 1], [1.0, 2.0]))


# -- Markov bounds ----------------------------------------------------------------

def test_markov_bound_examples():
    assert markov_lipschitz_bound(1, A=1.0) == 1.0
    assert markov_constant(I) == 1.0
    assert markov_constant(Rectangle(0, 2)) == pytest.approx(1.0)
    assert markov_constant(Rectangle(0, 0.5)) == pytest.approx(4.0)
    assert markov_lipschitz_bound(3, Rectangle(0, 4)) == pytest.approx(0.5 * 9)


@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_chebyshev_difference_quotients_obey_markov(k):
    rng = np.random.default_rng(k)
    x1, x2 = rng.uniform(-1, 1, (2, 20000))
    x1, x2 = np.append(x1, 1.0), np.append(x2, 1.0 - 1e-7)
    T = np.polynomial.chebyshev.Chebyshev.basis(k)
    q = np.abs(T(x1) - T(x2)) / np.abs(x1 - x2)
    assert q.max() <= markov_lipschitz_bound(k, I) + 1e-9
    assert q.max() >= 0.99 * k * k  # attained at the endpoint


def test_perturbation_floor_examples():
    p = MarkovBoundParams(1.0, 1.0, 1.0)
    assert perturbation_floor(400, p) == pytest.approx(1 - 400 ** 3 * math.exp(-20), abs=1e-12)
    assert perturbation_floor(400, p) == pytest.approx(0.868, abs=1e-3)
    assert perturbation_floor(100, p) < 0
    vals = [perturbation_floor(d, p) for d in range(400, 3000, 50)]
    assert all(b >= a for a, b in zip(vals, vals[1:])) and vals[-1] < 1
    with pytest.raises(ValueError):
        MarkovBoundParams(0.0, 1.0, 1.0)


def test_vdm_markov_params():
    p = vdm_markov_params(I, WeightFunction.poly(I, {(0, 0): 1.0, (2, 0): 0.25}))
    assert (p.A, p.c1, p.gamma1) == (1.0, 6.0, 1.0)
    with pytest.raises(UnsupportedWeightError):
        vdm_markov_params(I, WeightFunction.exp_poly(I, {(2, 0): 1.0}))
