"""Body-force models ``P f(t) = g(t) * profile``.

The profile is normalised to unit ``H,1`` norm under the run's renorming
parameters, so ``amplitude`` is exactly ``sup_t ||P f(t)||_{H,1}`` and the
Hölder constant of ``t -> P f(t)`` in that norm is exactly ``d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .spectral_field import SpectralGrid, VelocityField, random_field
from .stokes import RenormParams, norm_H1

KINDS = ("zero", "steady", "holder_family")


@dataclass(frozen=True)
class ForcingModel:
    """Time-modulated divergence-free forcing.

    ``holder_family`` uses ``g(t) = min(A, d |t - t0|^theta)``, which is
    ``theta``-Hölder with constant ``d`` because ``x -> x^theta`` is and
    ``min`` and ``|.|`` do not increase the constant.  ``zero`` and
    ``steady`` are constant in time, so they declare ``d = 0`` (any
    exponent works; 0.5 is recorded).
    """

    kind: str
    profile: VelocityField | None
    amplitude: float
    renorm: RenormParams
    d: float = 0.0
    theta: float | None = 0.5
    t0: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"forcing kind must be one of {KINDS}, got {self.kind!r}")
        if self.amplitude < 0 or self.d < 0:
            raise ValueError("forcing amplitude and Hölder constant must be >= 0")
        if self.kind == "zero" and self.amplitude != 0:
            raise ValueError("zero forcing has amplitude 0")
        if self.kind == "holder_family" and not (self.theta is not None and 0 < self.theta < 1):
            raise ValueError(f"holder_family needs 0 < theta < 1, got {self.theta}")

    @classmethod
    def zero(cls, renorm: RenormParams) -> "ForcingModel":
        return cls("zero", None, 0.0, renorm)

    @classmethod
    def steady(cls, profile: VelocityField, amplitude: float, renorm: RenormParams) -> "ForcingModel":
        return cls("steady", _unit(profile, renorm), float(amplitude), renorm)

    @classmethod
    def holder_family(
        cls,
        profile: VelocityField,
        amplitude: float,
        renorm: RenormParams,
        theta: float = 0.5,
        d: float | None = None,
        t0: float = 1.0,
    ) -> "ForcingModel":
        d = float(amplitude) if d is None else float(d)
        return cls("holder_family", _unit(profile, renorm), float(amplitude), renorm, d, theta, float(t0))

    @classmethod
    def from_seed(cls, kind: str, grid: SpectralGrid, seed: int, amplitude: float, renorm: RenormParams,
                  theta: float = 0.5, d: float | None = None, t0: float = 1.0) -> "ForcingModel":
        """Forcing whose profile is a seeded, steeply decaying random field."""
        if kind == "zero" or amplitude == 0:
            return cls.zero(renorm)
        profile = random_field(grid, 1.0, "H", seed, spectrum_decay=3.0)
        if kind == "steady":
            return cls.steady(profile, amplitude, renorm)
        return cls.holder_family(profile, amplitude, renorm, theta, d, t0)

    @property
    def f_sup(self) -> float:
        return self.amplitude

    def modulation(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "steady":
            return 1.0
        if self.amplitude == 0:
            return 0.0
        return min(1.0, self.d * abs(t - self.t0) ** self.theta / self.amplitude)

    def at(self, t: float, grid: SpectralGrid | None = None) -> VelocityField:
        if self.profile is None:
            if grid is None:
                raise ValueError("zero forcing needs the grid to build a field")
            return VelocityField.zeros(grid)
        return self.profile * (self.amplitude * self.modulation(t))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0


def _unit(profile: VelocityField, renorm: RenormParams) -> VelocityField:
    n = norm_H1(renorm, profile)
    if n == 0 or not math.isfinite(n):
        raise ValueError("forcing profile has zero H,1 norm")
    return profile * (1.0 / n)
