"""Ornstein-Uhlenbeck semigroup in an orthonormal Hermite basis.

Functions on ``R^dim`` with the standard Gaussian measure are expanded in
``prod_i He_{n_i}(x_i) / sqrt(n_i!)`` (probabilists' Hermite), truncated at
total degree ``|n| <= degree``.  The generator ``Delta - x . grad`` is
diagonal with eigenvalue ``-|n|``, the semigroup with ``exp(-|n| t)``.  The
matching Mehler kernel is ``T(t)f(x) = E f(e^{-t} x + sqrt(1 - e^{-2t}) Y)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e as H
from scipy.special import gammaln

from .nonlinear import AuditResult

OU_OMEGA = 1.0


def total_degree(dim: int, degree: int) -> np.ndarray:
    """``|n|`` on the dense ``(degree+1,)*dim`` index grid."""
    return np.sum(np.indices((degree + 1,) * dim), axis=0)


def _norm_factors(dim: int, degree: int) -> np.ndarray:
    """``sqrt(prod n_i!)`` on the dense index grid."""
    idx = np.indices((degree + 1,) * dim)
    return np.exp(0.5 * np.sum(gammaln(idx + 1.0), axis=0))


@dataclass(frozen=True, eq=False)
class HermiteFunctionExpansion:
    """Coefficients in the orthonormal Hermite basis, dense over ``n_i <= degree``.

    Entries with ``|n| > degree`` are kept at zero.
    """

    dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        shape = (self.degree + 1,) * self.dim
        c = np.array(self.coeffs, dtype=float)
        if c.shape != shape:
            raise ValueError(f"coefficient shape {c.shape} does not match {shape}")
        c[total_degree(self.dim, self.degree) > self.degree] = 0.0
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, dim: int, degree: int) -> "HermiteFunctionExpansion":
        return cls(dim, degree, np.zeros((degree + 1,) * dim))

    @classmethod
    def from_modes(cls, dim: int, degree: int, modes: dict) -> "HermiteFunctionExpansion":
        c = np.zeros((degree + 1,) * dim)
        for n, val in modes.items():
            if len(n) != dim or sum(n) > degree or min(n) < 0:
                raise ValueError(f"multi-index {n} outside the truncation")
            c[tuple(n)] = val
        return cls(dim, degree, c)

    @classmethod
    def random(cls, dim: int, degree: int, seed, mean_zero: bool = False) -> "HermiteFunctionExpansion":
        rng = np.random.default_rng(seed)
        c = rng.standard_normal((degree + 1,) * dim) * np.exp(-0.3 * total_degree(dim, degree))
        if mean_zero:
            c[(0,) * dim] = 0.0
        return cls(dim, degree, c)

    def with_coeffs(self, c: np.ndarray) -> "HermiteFunctionExpansion":
        return HermiteFunctionExpansion(self.dim, self.degree, c)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs**2)))

    def monomial_coeffs(self) -> np.ndarray:
        """Coefficients in the plain ``prod He_{n_i}`` basis."""
        return self.coeffs / _norm_factors(self.dim, self.degree)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(dim, ...)``."""
        x = np.asarray(x, dtype=float)
        c = self.monomial_coeffs()
        if self.dim == 1:
            return H.hermeval(x[0], c)
        if self.dim == 2:
            return H.hermeval2d(x[0], x[1], c)
        if self.dim == 3:
            return H.hermeval3d(x[0], x[1], x[2], c)
        raise ValueError("evaluate supports dim <= 3")


def ou_generator(e: HermiteFunctionExpansion) -> HermiteFunctionExpansion:
    return e.with_coeffs(-total_degree(e.dim, e.degree) * e.coeffs)


def ou_semigroup(t: float, e: HermiteFunctionExpansion) -> HermiteFunctionExpansion:
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    return e.with_coeffs(np.exp(-t * total_degree(e.dim, e.degree)) * e.coeffs)


def ou_operator_polynomial(e: HermiteFunctionExpansion) -> HermiteFunctionExpansion:
    """Apply ``Delta - x . grad`` by differentiating the polynomial directly.

    Independent of the diagonal rule: uses Hermite-series derivatives and
    multiplication by ``x`` along each axis.
    """
    c = e.monomial_coeffs()
    out = np.zeros_like(c)
    for ax in range(e.dim):
        lap = H.hermeder(c, 2, axis=ax)
        drift = _mulx(H.hermeder(c, 1, axis=ax), ax)
        out += _fit(lap, c.shape) - _fit(drift, c.shape)
    return e.with_coeffs(out * _norm_factors(e.dim, e.degree))


def _mulx(c: np.ndarray, ax: int) -> np.ndarray:
    """Multiply by ``x_ax`` using ``x He_n = He_{n+1} + n He_{n-1}``."""
    c = np.moveaxis(c, ax, 0)
    out = np.zeros((c.shape[0] + 1,) + c.shape[1:])
    out[1:] += c
    n = np.arange(1, c.shape[0]).reshape((-1,) + (1,) * (c.ndim - 1))
    out[: c.shape[0] - 1] += n * c[1:]
    return np.moveaxis(out, 0, ax)


def _fit(a: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    sl = tuple(slice(0, min(s, t)) for s, t in zip(a.shape, shape))
    out[sl] = a[sl]
    return out


def expand_1d(func, degree: int, order: int = 120) -> HermiteFunctionExpansion:
    """Gauss-Hermite projection of a 1D function onto the orthonormal basis."""
    y, w = H.hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    fy = func(y)
    c = [np.sum(w * fy * H.hermeval(y, np.eye(degree + 1)[n])) / math.sqrt(math.factorial(n))
         for n in range(degree + 1)]
    return HermiteFunctionExpansion(1, degree, np.array(c))


def mehler_quadrature(func, x: np.ndarray, t: float, order: int = 80) -> np.ndarray:
    """``E f(e^{-t} x + sqrt(1 - e^{-2t}) Y)`` for 1D ``func`` by Gauss-Hermite."""
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    y, w = H.hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    x = np.asarray(x, dtype=float)
    pts = math.exp(-t) * x[..., None] + math.sqrt(-math.expm1(-2 * t)) * y
    return np.sum(w * func(pts), axis=-1)


def exp_coefficients(a: float, degree: int) -> HermiteFunctionExpansion:
    """Orthonormal coefficients of ``exp(a x)``: ``e^{a^2/2} a^n / sqrt(n!)``."""
    n = np.arange(degree + 1)
    c = math.exp(a * a / 2) * a**n / np.exp(0.5 * gammaln(n + 1.0))
    return HermiteFunctionExpansion(1, degree, c)


# -- renormed boundedness of the generator ----------------------------------


@dataclass(frozen=True)
class OURenorm:
    gamma: float
    omega: float
    M: float
    c: float

    @property
    def bound(self) -> float:
        return self.M * self.c / self.gamma


def ou_renorm(gamma: float, degree: int, omega: float = OU_OMEGA) -> OURenorm:
    """``M = e^{(degree - omega) gamma}`` and ``c = gamma max_{n>=1} n e^{-(n - omega) gamma}``."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    n = np.arange(1, degree + 1)
    c = gamma * float(np.max(n * np.exp(-(n - omega) * gamma)))
    return OURenorm(gamma, omega, math.exp((degree - omega) * gamma), c)


def renormed_norm(e: HermiteFunctionExpansion, gamma: float, omega: float = OU_OMEGA) -> float:
    m = np.exp((omega - total_degree(e.dim, e.degree)) * gamma)
    return float(np.sqrt(np.sum((m * e.coeffs) ** 2)))


def generator_ratio(e: HermiteFunctionExpansion, gamma: float, omega: float = OU_OMEGA) -> float | None:
    """``||D^2 w||_{2,gamma} / ||w||_{2,gamma}``; ``None`` for constants."""
    num = renormed_norm(ou_generator(e), gamma, omega)
    if num == 0:
        return None
    return num / renormed_norm(e, gamma, omega)


def ou_renorm_bound_audit(gamma: float, samples: int, seed: int, dim: int = 3, degree: int = 8,
                          omega: float = OU_OMEGA) -> AuditResult:
    """Sampling audit of ``||D^2 w||_{2,gamma} <= (M c / gamma) ||w||_{2,gamma}``."""
    rn = ou_renorm(gamma, degree, omega)
    res = AuditResult("ou.renorm_bound")
    for i in range(samples):
        w = HermiteFunctionExpansion.random(dim, degree, [seed, 7, i])
        r = generator_ratio(w, gamma, omega)
        if r is None:
            continue
        res.record(r, rn.bound, rn.bound, ("ou.renorm_bound", seed, i))
    return res


# -- full validation suite ----------------------------------------------------


@dataclass(frozen=True)
class OUCheck:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound


def ou_validation_suite(seed: int = 0, samples: int = 1000, gamma: float = 0.5, dim: int = 3,
                        degree: int = 8, degree_1d: int = 20) -> list[OUCheck]:
    """Every OU check as ``(name, measured, allowed)`` rows."""
    checks = []

    one = HermiteFunctionExpansion.from_modes(dim, degree, {(0,) * dim: 1.0})
    dev = max(np.max(np.abs(ou_semigroup(t, one).coeffs - one.coeffs)) for t in (0.0, 0.5, 3.0, 50.0))
    checks.append(OUCheck("ou.constant_invariant", float(dev), 0.0))

    worst = 0.0
    eig_deg = 10
    for n in itertools.product(range(eig_deg + 1), repeat=dim):
        if sum(n) > eig_deg:
            continue
        e = HermiteFunctionExpansion.from_modes(dim, eig_deg, {n: 1.0})
        lhs = ou_operator_polynomial(e).coeffs
        worst = max(worst, float(np.max(np.abs(lhs + sum(n) * e.coeffs))))
    checks.append(OUCheck("ou.eigen_relation", worst, 1e-10))

    xs = np.linspace(-3, 3, 13)
    worst = 0.0
    tests = [(lambda x: x, "x"), (lambda x: x**2, "x2"), (lambda x: np.exp(0.5 * x), "exp")]
    for fn, _ in tests:
        e = expand_1d(fn, degree_1d)
        for t in (0.1, 1.0, 3.0):
            diag = ou_semigroup(t, e).evaluate(xs[None])
            quad = mehler_quadrature(fn, xs, t)
            worst = max(worst, float(np.max(np.abs(diag - quad) / np.maximum(1.0, np.abs(quad)))))
    checks.append(OUCheck("ou.mehler_vs_diagonal", worst, 1e-8))

    a = HermiteFunctionExpansion.random(dim, degree, [seed, 1])
    law = np.max(np.abs(ou_semigroup(0.3, ou_semigroup(0.7, a)).coeffs - ou_semigroup(1.0, a).coeffs))
    checks.append(OUCheck("ou.semigroup_law", float(law), 1e-13))

    w = HermiteFunctionExpansion.random(dim, degree, [seed, 2], mean_zero=True)
    contr = max(ou_semigroup(t, w).norm() - math.exp(-t) * w.norm() for t in (0.1, 1.0, 5.0))
    checks.append(OUCheck("ou.mean_zero_contraction", float(max(contr, 0.0)), 1e-14 * w.norm()))

    g = ou_generator(a)
    errs = [np.max(np.abs((ou_semigroup(h, a).coeffs - a.coeffs) / h - g.coeffs)) for h in (1e-4, 5e-5)]
    slope = math.log2(errs[0] / errs[1])
    checks.append(OUCheck("ou.generator_slope_error", abs(slope - 1.0), 0.05))

    aud = ou_renorm_bound_audit(gamma, samples, seed, dim, degree)
    checks.append(OUCheck("ou.renorm_bound_violations", float(aud.violations), 0.0))
    rn = ou_renorm(gamma, degree)
    single = max(abs(generator_ratio(HermiteFunctionExpansion.from_modes(dim, degree, {(m,) + (0,) * (dim - 1): 1.0}),
                                     gamma) - m) for m in range(1, degree + 1))
    checks.append(OUCheck("ou.single_mode_ratio", float(single), 1e-12 * degree))
    checks.append(OUCheck("ou.single_mode_bounded", float(degree), rn.bound))
    return checks
