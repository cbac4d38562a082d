import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrenorm.spectral_field import eigenmode, get_grid, inner_product_H, norm_H, random_field
from nsrenorm.stokes import (
    RenormParams,
    StokesSpectrum,
    apply_A,
    apply_A_inverse,
    apply_A_power,
    inner_product_H1,
    log10_M,
    norm_H1,
    r_hat,
    renorm_apply_S,
    semigroup_T,
    smoothing_constant,
)


def test_spectrum_ladder(spec):
    assert spec.lambda1 == 1.0
    # largest stored |k|^2 at N = 16 is 3 * 7^2
    assert spec.lambda_max == 147.0
    assert list(spec.eigenvalues) == sorted(spec.eigenvalues)


def test_spectrum_scales_with_box():
    s = StokesSpectrum.from_grid(get_grid(8, 4 * math.pi))
    assert s.lambda1 == pytest.approx(0.25)


def test_A_on_eigenmodes(grid):
    u = eigenmode(grid, (1, 0, 0))
    assert np.allclose(apply_A(u).coeffs, u.coeffs, rtol=0, atol=1e-16)
    u = eigenmode(grid, (1, 2, 2))
    assert np.allclose(apply_A(u).coeffs, 9 * u.coeffs, rtol=1e-15, atol=0)


def test_powers_compose(grid):
    u = random_field(grid, 1.0, seed=2)
    half = apply_A_power(0.5, apply_A_power(0.5, u))
    assert np.allclose(half.coeffs, apply_A(u).coeffs, rtol=1e-13, atol=1e-16)
    back = apply_A_inverse(apply_A(u))
    assert np.allclose(back.coeffs, u.coeffs, rtol=1e-13, atol=1e-17)


def test_semigroup_examples(grid):
    u = random_field(grid, 1.0, seed=3)
    assert np.array_equal(semigroup_T(0.0, u).coeffs, u.coeffs)
    m = eigenmode(grid, (0, 1, 0), 1.0)
    assert math.isclose(norm_H(semigroup_T(math.log(2), m)), 0.5, rel_tol=1e-14)
    assert norm_H(semigroup_T(0.3, u)) <= math.exp(-0.3) * norm_H(u)
    with pytest.raises(ValueError):
        semigroup_T(-1.0, u)


def test_semigroup_law_and_commutation(grid):
    u = random_field(grid, 1.0, seed=4)
    a = semigroup_T(0.2, semigroup_T(0.5, u))
    b = semigroup_T(0.7, u)
    assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-13 * np.max(np.abs(b.coeffs))
    lhs, rhs = apply_A(semigroup_T(0.3, u)).coeffs, semigroup_T(0.3, apply_A(u)).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-15 * np.max(np.abs(rhs))


def test_renorm_examples(grid, spec):
    p = RenormParams.build(spec, 0.4)
    m = eigenmode(grid, (0, 0, 1))
    assert np.allclose(renorm_apply_S(p, m).coeffs, m.coeffs, rtol=1e-15, atol=0)
    p0 = RenormParams.build(spec, 0.4, omega=0.0)
    u = random_field(grid, 1.0, seed=5)
    assert np.allclose(renorm_apply_S(p0, u).coeffs, semigroup_T(0.4, u).coeffs, rtol=1e-15, atol=0)


def test_renorm_params_validation(spec):
    with pytest.raises(ValueError):
        RenormParams.build(spec, -0.1)
    with pytest.raises(ValueError):
        RenormParams.build(spec, 0.1, omega=2.0)
    p = RenormParams.build(spec, 0.5)
    assert p.M == math.exp(146 * 0.5)
    assert math.isclose(p.log10_M, log10_M(spec, 0.5, 1.0), rel_tol=1e-12)


def test_h1_at_r_zero_is_plain(grid, spec):
    p = RenormParams.build(spec, 0.0)
    u, v = random_field(grid, 1.0, seed=6), random_field(grid, 1.0, seed=7)
    assert inner_product_H1(p, u, v) == inner_product_H(u, v)


def test_h1_single_mode_closed_form(grid, spec):
    p = RenormParams.build(spec, 0.3)
    u = eigenmode(grid, (1, 1, 0), 2.0)
    assert math.isclose(norm_H1(p, u), math.exp((1 - 2) * 0.3) * 2.0, rel_tol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), r=st.floats(0.01, 1.0), decay=st.floats(0.0, 3.0))
def test_norm_equivalence(seed, r, decay):
    g = get_grid(8)
    s = StokesSpectrum.from_grid(g)
    p = RenormParams.build(s, r)
    u = random_field(g, 1.0, seed=seed, spectrum_decay=decay)
    n1 = norm_H1(p, u)
    assert n1 <= norm_H(u) * (1 + 1e-14)
    assert norm_H(u) <= p.M * n1 * (1 + 1e-14)
    assert norm_H1(p, apply_A_inverse(u)) <= n1 / s.lambda1 * (1 + 1e-14)


@settings(max_examples=20, deadline=None)
@given(s1=st.integers(0, 10**6), s2=st.integers(0, 10**6))
def test_h1_cauchy_schwarz(s1, s2):
    g = get_grid(8)
    s = StokesSpectrum.from_grid(g)
    p = RenormParams.build(s, 0.2)
    u, v = random_field(g, 1.0, seed=s1), random_field(g, 1.0, seed=s2)
    assert abs(inner_product_H1(p, u, v)) <= norm_H1(p, u) * norm_H1(p, v) * (1 + 1e-14)


def test_smoothing_single_eigenvalue():
    s = StokesSpectrum((1.0,))
    p = RenormParams(1.0, 0.7, 1.0)
    c = smoothing_constant(1.0, p, s)
    assert c.value == pytest.approx(0.7)
    assert c.operator_norm == pytest.approx(1.0)


def _extremal_ratio(z, p, grid, lam):
    # ||A^z S(r) u||_H / ||u||_H on an eigenmode of eigenvalue lam
    idx = np.argwhere(grid.mask & np.isclose(grid.ksq, lam))[0]
    u = eigenmode(grid, tuple(int(x) for x in grid.lattice[(slice(None),) + tuple(idx)]))
    return norm_H(apply_A_power(z, renorm_apply_S(p, u))) / norm_H(u)


@pytest.mark.parametrize("z", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("r", [0.1, 0.2, 0.4, 0.8])
def test_smoothing_constant_attained(grid, spec, z, r):
    p = RenormParams.build(spec, r)
    c = smoothing_constant(z, p, spec)
    # oracle: brute-force ratio over one eigenmode per distinct eigenvalue
    lam = spec.as_array()
    brute = np.max(lam**z * np.exp(-(lam - p.omega) * r))
    assert math.isclose(c.operator_norm, brute, rel_tol=1e-14)
    assert math.isclose(c.value, r**z * brute, rel_tol=1e-14)
    assert math.isclose(_extremal_ratio(z, p, grid, c.extremal_eigenvalue), c.operator_norm, rel_tol=1e-12)
    # the renormed smoothing bound holds on random fields
    for seed in range(5):
        u = random_field(grid, 1.0, seed=seed, spectrum_decay=0.0)
        assert norm_H1(p, apply_A_power(z, u)) <= p.M * c.value / r**z * norm_H1(p, u)


def test_smoothing_rejects_bad_input(spec):
    with pytest.raises(ValueError):
        smoothing_constant(0.0, RenormParams.build(spec, 0.1), spec)
    with pytest.raises(ValueError):
        smoothing_constant(1.0, RenormParams.build(spec, 0.0), spec)


def test_r_hat_is_fixed_point(spec):
    rh = r_hat(spec)
    assert rh == pytest.approx(math.log(2), rel=1e-15)
    c2 = smoothing_constant(1.0, RenormParams.build(spec, rh), spec).value
    assert math.isclose(c2 / spec.lambda1, rh, rel_tol=1e-12)
    # no smaller r solves the fixed-point equation
    for r in np.linspace(0.01, rh * 0.999, 50):
        c2 = smoothing_constant(1.0, RenormParams.build(spec, r), spec).value
        assert c2 / spec.lambda1 > r


def test_r_hat_needs_two_eigenvalues():
    with pytest.raises(ValueError):
        r_hat(StokesSpectrum((1.0,)))
