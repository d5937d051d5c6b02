import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clocksim.linalg import DomainError
from clocksim.quadrature import (
    error_bound_1d,
    gauss_legendre,
    legendre_eval,
    nested_grid,
    nested_nodes_weights,
    nested_weight_closed_form,
    partial_sum,
    quadrature_error_1d,
    scaled_rule,
    spacing_residual,
    weight_residual,
)


def test_legendre_small_cases():
    p, dp = legendre_eval(2, 0.0)
    assert p == pytest.approx(-0.5) and dp == pytest.approx(0.0)
    assert legendre_eval(5, 1.0)[0] == 1.0
    assert abs(legendre_eval(3, math.sqrt(3 / 5))[0]) <= 1e-14
    # endpoint derivative q(q+1)/2 with parity sign
    assert legendre_eval(4, -1.0)[1] == pytest.approx(-10.0)
    with pytest.raises(DomainError):
        legendre_eval(3, 1.5)


def test_low_order_rules():
    r1 = gauss_legendre(1)
    assert np.allclose(r1.x, [0.0]) and np.allclose(r1.w, [2.0])
    r2 = gauss_legendre(2)
    assert np.allclose(r2.x, [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    assert np.allclose(r2.w, [1.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("q", [3, 10, 64, 257, 1000])
def test_matches_numpy_leggauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    rule = gauss_legendre(q)
    assert np.max(np.abs(rule.x - x)) <= 1e-14
    assert np.max(np.abs(rule.w - w)) <= 1e-13


@pytest.mark.parametrize("q", [1, 2, 7, 16, 64, 4096])
def test_rule_invariants(q):
    rule = gauss_legendre(q)
    assert np.all(np.diff(rule.x) > 0)
    assert np.max(np.abs(rule.x + rule.x[::-1])) <= 1e-13
    assert np.all(rule.w > 0)
    assert abs(np.sum(rule.w) - 2) <= 1e-13
    p, dp = legendre_eval(q, rule.x)
    if q <= 256:
        assert np.max(np.abs(p)) <= 1e-13
    # |P'| grows like q^2, so large orders are checked as a root error in x
    assert np.max(np.abs(p / dp)) <= 1e-15


def test_rule_is_read_only_and_cached():
    rule = gauss_legendre(12)
    assert gauss_legendre(12) is rule
    with pytest.raises(ValueError):
        rule.x[0] = 0.0


def test_order_out_of_range():
    with pytest.raises(DomainError):
        gauss_legendre(0)
    with pytest.raises(DomainError):
        gauss_legendre(5000)


@pytest.mark.parametrize("q", [2, 8, 16, 64])
def test_monomial_exactness(q):
    rule = gauss_legendre(q)
    for p in range(2 * q):
        moment = 0.0 if p % 2 else 2 / (p + 1)
        assert abs(np.sum(rule.w * rule.x**p) - moment) <= 1e-12 * max(1, moment)
    assert abs(np.sum(gauss_legendre(16).w * gauss_legendre(16).x ** 30) - 2 / 31) <= 1e-14


@given(st.integers(1, 20), st.floats(0.1, 5.0), st.data())
@settings(max_examples=40, deadline=None)
def test_scaled_rule_integrates_polynomials(q, t, data):
    deg = data.draw(st.integers(0, 2 * q - 1))
    sr = scaled_rule(q, t)
    assert abs(np.sum(sr.w) - t) <= 1e-12 * max(1, t)
    assert np.all((sr.x > 0) & (sr.x < t))
    exact = t ** (deg + 1) / (deg + 1)
    assert sr.integrate(lambda x: x**deg) == pytest.approx(exact, rel=1e-11)


@pytest.mark.parametrize("q", [16, 32, 64, 128, 256])
def test_asymptotic_residuals_bounded(q):
    rule = gauss_legendre(q)
    assert spacing_residual(rule) <= 10
    assert weight_residual(rule) <= 10


def test_spacing_small_q_and_central_weight():
    r4 = gauss_legendre(4)
    gap = r4.x[2] - r4.x[1]
    assert abs(gap - math.pi / 4 * math.sqrt(1 - r4.x[1] ** 2)) <= 0.25 * gap
    # the pi/q asymptotic carries a relative offset of about 1/(2q) at the centre
    q = 128
    r = gauss_legendre(q)
    j = q // 2
    rel = abs(r.w[j] - math.pi / q * math.sqrt(1 - r.x[j] ** 2)) / r.w[j]
    assert rel == pytest.approx(1 / (2 * q + 1), rel=0.05)
    with pytest.raises(DomainError):
        spacing_residual(gauss_legendre(2))


def test_partial_sum_trivial_cases():
    q = 32
    rule = gauss_legendre(q)
    full = partial_sum(rule, 1, q, lambda x: np.ones_like(x), lipschitz=0.0, sup_f=1.0)
    assert full.sum == pytest.approx(2.0, abs=1e-13)
    assert full.integral == pytest.approx(rule.x[-1] - rule.x[0])
    odd = partial_sum(rule, 1, q, lambda x: x, lipschitz=1.0, sup_f=1.0)
    assert abs(odd.sum) <= 1e-15
    with pytest.raises(DomainError):
        partial_sum(rule, 5, 4, np.exp, 1.0)


@pytest.mark.parametrize("q", [64, 128, 256])
def test_partial_sum_lemma_exp(q):
    rule = gauss_legendre(q)
    res = partial_sum(rule, q // 4 + 1, 3 * q // 4, np.exp, lipschitz=math.e, sup_f=math.e)
    assert res.passed
    assert res.residual_next is not None


def test_nested_nodes_small_cases():
    rule = gauss_legendre(5)
    sr = scaled_rule(5, 1.0)
    nodes, w = nested_nodes_weights(rule, 1.0, [3])
    assert nodes[0] == sr.x[3] and w == sr.w[3]
    nodes, _ = nested_nodes_weights(rule, 1.0, [2, 4])
    assert nodes[1] == pytest.approx(sr.x[2] * sr.x[4])
    inner = [nested_nodes_weights(rule, 1.0, [j2, j1])[0][1] for j2 in range(5) for j1 in range(5)]
    assert np.all(np.diff(np.reshape(inner, (5, 5)), axis=0) > 0)
    assert np.all(np.diff(np.reshape(inner, (5, 5)), axis=1) > 0)
    with pytest.raises(DomainError):
        nested_nodes_weights(rule, 1.0, [0] * 65)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_recursive_vs_closed_form_exhaustive(k):
    rule = gauss_legendre(8)
    for idx in itertools.product(range(8), repeat=k):
        _, w = nested_nodes_weights(rule, 0.9, idx)
        assert w == pytest.approx(nested_weight_closed_form(rule, 0.9, idx), rel=1e-12)


def test_recursive_vs_closed_form_random(rng):
    for _ in range(1000):
        q = int(rng.integers(1, 65))
        k = int(rng.integers(1, 7))
        idx = rng.integers(0, q, size=k)
        rule = gauss_legendre(q)
        _, w = nested_nodes_weights(rule, 1.7, idx)
        assert w == pytest.approx(nested_weight_closed_form(rule, 1.7, idx), rel=1e-12)


@pytest.mark.parametrize("q,t", [(8, 1.0), (3, 0.4), (2, 2.5)])
def test_simplex_volume(q, t):
    rule = gauss_legendre(q)
    for k in range(1, min(4, 2 * q) + 1):
        _, w = nested_grid(rule, t, k)
        assert np.sum(w) == pytest.approx(t**k / math.factorial(k), rel=1e-10)


def test_nested_grid_matches_single_tuples():
    rule = gauss_legendre(4)
    nodes, weights = nested_grid(rule, 0.8, 3)
    n, w = nested_nodes_weights(rule, 0.8, (1, 3, 2))
    assert np.allclose(nodes[1, 3, 2], n) and weights[1, 3, 2] == pytest.approx(w)


def test_error_1d_polynomial_and_cosine():
    rule = gauss_legendre(3)
    approx, exact, bound = quadrature_error_1d(rule, 1.3, lambda x: x**5 - x, 0.0)
    assert bound == 0 and abs(approx - exact) <= 1e-13
    for q in (2, 3, 4):
        approx, exact, bound = quadrature_error_1d(gauss_legendre(q), 1.0, lambda x: np.cos(4 * x), 4.0 ** (2 * q))
        assert abs(approx - exact) <= bound
        approx, exact, bound = quadrature_error_1d(gauss_legendre(q), 1.0, lambda x: np.exp(4j * x), 4.0 ** (2 * q))
        assert abs(exact - (np.exp(4j) - 1) / 4j) <= 1e-12
        assert abs(approx - exact) <= bound


def test_error_bound_handles_large_orders():
    assert error_bound_1d(2000, 1.0, 1.0) == 0.0 or error_bound_1d(2000, 1.0, 1.0) < 1e-300
    assert math.isinf(error_bound_1d(4, 1e80, 1.0))
