"""Diagonal calculus for the Stokes operator on the torus.

On divergence-free Fourier modes ``A = -P Laplacian`` acts as ``|kphys|^2``,
so powers, the semigroup ``T(t) = exp(-tA)`` and the renorming semigroup
``S(t) = exp(omega t) T(t)`` are per-mode multipliers.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .spectral_field import SpectralGrid, VelocityField, inner_product_H


@dataclass(frozen=True)
class StokesSpectrum:
    """Distinct Stokes eigenvalues present on the truncation, ascending."""

    eigenvalues: tuple[float, ...]

    @classmethod
    def from_grid(cls, grid: SpectralGrid) -> "StokesSpectrum":
        return _spectrum_for(grid)

    @property
    def lambda1(self) -> float:
        return self.eigenvalues[0]

    @property
    def lambda_max(self) -> float:
        return self.eigenvalues[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.eigenvalues)


@functools.lru_cache(maxsize=None)
def _spectrum_for(grid: SpectralGrid) -> StokesSpectrum:
    vals = np.unique(np.round(grid.ksq[grid.mask], 12))
    return StokesSpectrum(tuple(float(v) for v in vals))


@dataclass(frozen=True)
class RenormParams:
    """Parameters of the equivalent norm ``||u||_{H,1} = ||S(r) u||_H``.

    ``M`` is the exact norm-equivalence constant on the truncation,
    ``exp((lambda_max - omega) r)``; it grows without bound with N.
    """

    omega: float
    r: float
    M: float

    @classmethod
    def build(cls, spectrum: StokesSpectrum, r: float, omega: float | None = None) -> "RenormParams":
        omega = spectrum.lambda1 if omega is None else float(omega)
        if r < 0:
            raise ValueError(f"renorming time r must be >= 0, got {r}")
        if omega < 0 or omega > spectrum.lambda1 * (1 + 1e-14):
            raise ValueError(f"omega must lie in [0, lambda1={spectrum.lambda1}], got {omega}")
        with np.errstate(over="ignore"):
            M = float(np.exp((spectrum.lambda_max - omega) * r))
        return cls(omega, float(r), M)

    @property
    def log10_M(self) -> float:
        return math.log10(math.e) * math.log(self.M) if math.isfinite(self.M) else math.inf


def log10_M(spectrum: StokesSpectrum, r: float, omega: float) -> float:
    """``log10 M`` without overflow, for reporting huge truncations."""
    return (spectrum.lambda_max - omega) * r / math.log(10.0)


def _mult(u: VelocityField, m: np.ndarray) -> VelocityField:
    return u.multiply(m * u.grid.mask)


def apply_A(u: VelocityField) -> VelocityField:
    return _mult(u, u.grid.ksq)


def apply_A_inverse(u: VelocityField) -> VelocityField:
    return _mult(u, u.grid.inv_ksq)


def apply_A_power(z: float, u: VelocityField) -> VelocityField:
    return _mult(u, _power_multiplier(u.grid, float(z)))


@functools.lru_cache(maxsize=64)
def _power_multiplier(grid: SpectralGrid, z: float) -> np.ndarray:
    out = np.zeros(grid.shape)
    out[grid.mask] = grid.ksq[grid.mask] ** z
    return out


def semigroup_T(t: float, u: VelocityField) -> VelocityField:
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    return _mult(u, np.exp(-t * u.grid.ksq))


@functools.lru_cache(maxsize=64)
def renorm_multiplier(grid: SpectralGrid, omega: float, r: float) -> np.ndarray:
    """Per-mode factor ``exp((omega - lambda_k) r)`` of ``S(r)``."""
    return np.exp((omega - grid.ksq) * r) * grid.mask


def renorm_apply_S(p: RenormParams, u: VelocityField) -> VelocityField:
    return u.multiply(renorm_multiplier(u.grid, p.omega, p.r))


def inner_product_H1(p: RenormParams, u: VelocityField, v: VelocityField) -> float:
    u._same_grid(v)
    m2 = renorm_multiplier(u.grid, p.omega, p.r) ** 2
    return u.grid.inner(u.coeffs * m2[None], v.coeffs)


def norm_H1(p: RenormParams, u: VelocityField) -> float:
    return math.sqrt(max(inner_product_H1(p, u, u), 0.0))


@dataclass(frozen=True)
class SmoothingConstant:
    """``c_z = r^z max_k lambda_k^z exp(-(lambda_k - omega) r)``.

    ``operator_norm = c_z / r^z`` is the exact norm of ``A^z S(r)`` on the
    truncation and is attained by an eigenmode of ``extremal_eigenvalue``.
    """

    z: float
    value: float
    operator_norm: float
    extremal_eigenvalue: float


def smoothing_constant(z: float, p: RenormParams, spec: StokesSpectrum) -> SmoothingConstant:
    if not z > 0:
        raise ValueError(f"smoothing exponent z must be positive, got {z}")
    if not p.r > 0:
        raise ValueError("smoothing constant needs r > 0")
    lam = spec.as_array()
    vals = lam**z * np.exp(-(lam - p.omega) * p.r)
    i = int(np.argmax(vals))
    return SmoothingConstant(z, float(p.r**z * vals[i]), float(vals[i]), float(lam[i]))


def r_hat(spec: StokesSpectrum, omega: float | None = None) -> float:
    """Smallest ``r`` solving ``r = c_2(r) / lambda_1`` (``c_2`` = z=1 constant).

    ``c_2(r)/lambda_1 = r`` holds exactly when
    ``max_k lambda_k exp(-(lambda_k - omega) r) = lambda_1``, which gives the
    closed form ``max_{lambda_k > lambda_1} ln(lambda_k/lambda_1)/(lambda_k - omega)``.
    """
    omega = spec.lambda1 if omega is None else omega
    lam = spec.as_array()
    lam1 = spec.lambda1
    upper = lam[lam > lam1]
    if upper.size == 0:
        raise ValueError("r_hat needs at least two distinct eigenvalues")
    return float(np.max(np.log(upper / lam1) / (upper - omega)))


def check_same_grid(*fields: VelocityField) -> SpectralGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        fields[0]._same_grid(f)
    return grid


__all__ = [
    "StokesSpectrum",
    "RenormParams",
    "SmoothingConstant",
    "apply_A",
    "apply_A_inverse",
    "apply_A_power",
    "semigroup_T",
    "renorm_apply_S",
    "renorm_multiplier",
    "inner_product_H",
    "inner_product_H1",
    "norm_H1",
    "smoothing_constant",
    "r_hat",
    "log10_M",
]
