import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrenorm.ou import (
    HermiteFunctionExpansion,
    exp_coefficients,
    expand_1d,
    generator_ratio,
    mehler_quadrature,
    ou_generator,
    ou_operator_polynomial,
    ou_renorm,
    ou_renorm_bound_audit,
    ou_semigroup,
    ou_validation_suite,
)

X = sp.symbols("x1 x2 x3")


def _symbolic_ou(expr):
    return sum(sp.diff(expr, x, 2) - x * sp.diff(expr, x) for x in X)


def _he(n, x):
    # probabilists' Hermite via the Rodrigues-type recursion
    h0, h1 = sp.Integer(1), x
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, sp.expand(x * h1 - k * h0)
    return h1


@pytest.mark.parametrize("n", [(0, 0, 0), (1, 0, 0), (2, 1, 0), (0, 3, 2), (1, 1, 1)])
def test_generator_eigen_relation_symbolic(n):
    expr = sp.Mul(*[_he(k, x) for k, x in zip(n, X)])
    lhs = sp.expand(_symbolic_ou(expr))
    assert sp.simplify(lhs + sum(n) * expr) == 0
    e = HermiteFunctionExpansion.from_modes(3, 6, {n: 1.0})
    assert np.allclose(ou_generator(e).coeffs, -sum(n) * e.coeffs)


def test_generator_examples():
    one = HermiteFunctionExpansion.from_modes(3, 4, {(0, 0, 0): 1.0})
    assert np.all(ou_generator(one).coeffs == 0)
    he1 = HermiteFunctionExpansion.from_modes(3, 4, {(1, 0, 0): 1.0})
    assert np.array_equal(ou_generator(he1).coeffs, -he1.coeffs)
    mixed = HermiteFunctionExpansion.from_modes(3, 4, {(2, 1, 0): 1.0})
    assert np.array_equal(ou_generator(mixed).coeffs, -3 * mixed.coeffs)


def test_polynomial_operator_matches_diagonal():
    e = HermiteFunctionExpansion.random(3, 10, 4)
    assert np.max(np.abs(ou_operator_polynomial(e).coeffs - ou_generator(e).coeffs)) < 1e-10


def test_evaluate_against_sympy():
    e = HermiteFunctionExpansion.from_modes(3, 5, {(2, 1, 0): 0.5, (0, 0, 3): -1.0})
    expr = 0.5 * _he(2, X[0]) * _he(1, X[1]) / math.sqrt(2) - _he(3, X[2]) / math.sqrt(6)
    f = sp.lambdify(X, expr, "numpy")
    pts = np.random.default_rng(0).standard_normal((3, 7))
    assert np.allclose(e.evaluate(pts), f(*pts), rtol=1e-13, atol=1e-13)


def test_constants_invariant():
    one = HermiteFunctionExpansion.from_modes(2, 6, {(0, 0): 2.0})
    for t in (0.0, 0.1, 7.0):
        assert np.array_equal(ou_semigroup(t, one).coeffs, one.coeffs)


def test_semigroup_on_x_by_quadrature():
    e = expand_1d(lambda x: x, 10)
    xs = np.linspace(-2, 2, 9)
    for t in (0.2, 1.5):
        assert np.allclose(ou_semigroup(t, e).evaluate(xs[None]), math.exp(-t) * xs, atol=1e-12)
        assert np.allclose(mehler_quadrature(lambda x: x, xs, t), math.exp(-t) * xs, atol=1e-12)


def test_exp_coefficients_against_quadrature():
    assert np.allclose(exp_coefficients(0.7, 20).coeffs, expand_1d(lambda x: np.exp(0.7 * x), 20).coeffs,
                       atol=1e-12)


@pytest.mark.parametrize("fn", [lambda x: x**2, lambda x: np.exp(0.5 * x), lambda x: x**3 - x])
def test_mehler_matches_diagonal(fn):
    e = expand_1d(fn, 20)
    xs = np.linspace(-3, 3, 13)
    for t in (0.05, 0.5, 2.0):
        assert np.allclose(ou_semigroup(t, e).evaluate(xs[None]), mehler_quadrature(fn, xs, t), rtol=1e-8, atol=1e-8)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        ou_semigroup(-0.1, HermiteFunctionExpansion.zeros(1, 3))
    with pytest.raises(ValueError):
        mehler_quadrature(np.sin, np.zeros(2), -1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), s=st.floats(0, 3), t=st.floats(0, 3))
def test_semigroup_law(seed, s, t):
    e = HermiteFunctionExpansion.random(3, 6, seed)
    a = ou_semigroup(s, ou_semigroup(t, e)).coeffs
    b = ou_semigroup(s + t, e).coeffs
    assert np.max(np.abs(a - b)) <= 1e-13 * max(1.0, np.max(np.abs(b)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0, 5))
def test_mean_zero_contraction(seed, t):
    w = HermiteFunctionExpansion.random(3, 6, seed, mean_zero=True)
    assert ou_semigroup(t, w).norm() <= math.exp(-t) * w.norm() * (1 + 1e-14)


def test_generator_is_derivative_of_semigroup():
    e = HermiteFunctionExpansion.random(3, 6, 1)
    g = ou_generator(e).coeffs
    err = [np.max(np.abs((ou_semigroup(h, e).coeffs - e.coeffs) / h - g)) for h in (1e-4, 5e-5)]
    assert math.log2(err[0] / err[1]) == pytest.approx(1.0, abs=0.05)


def test_renorm_constant_and_single_modes():
    rn = ou_renorm(0.5, 8)
    n = np.arange(1, 9)
    assert rn.c == pytest.approx(0.5 * np.max(n * np.exp(-(n - 1) * 0.5)))
    assert rn.M == pytest.approx(math.exp(7 * 0.5))
    for m in range(1, 9):
        w = HermiteFunctionExpansion.from_modes(3, 8, {(0, m, 0): 1.0})
        assert generator_ratio(w, 0.5) == pytest.approx(m, rel=1e-14)
        assert m <= rn.bound
    assert generator_ratio(HermiteFunctionExpansion.from_modes(3, 8, {(0, 0, 0): 1.0}), 0.5) is None
    with pytest.raises(ValueError):
        ou_renorm(1.0, 8)


def test_renorm_audit_and_suite():
    res = ou_renorm_bound_audit(0.3, 50, 0)
    assert res.passed and res.samples == 50
    checks = ou_validation_suite(samples=20)
    assert all(c.name.startswith("ou.") for c in checks)
    assert all(c.passed for c in checks)
