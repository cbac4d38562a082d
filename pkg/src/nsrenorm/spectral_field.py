"""Divergence-free velocity fields on the periodic torus.

Fields are stored as Fourier coefficients in the ``rfftn`` half-lattice
layout, shape ``(3, N, N, N//2 + 1)``.  The coefficient convention is

    u(x) = sum_k  u_hat(k) exp(i kphys . x),   kphys = (2 pi / L) k

so that ``||u||_H^2 = L^3 * sum_k |u_hat(k)|^2`` (sum over the full lattice).
The conjugate half is implicit.  On the ``kz = 0`` plane both k and -k are
stored; every constructor enforces ``u_hat(-k) = conj(u_hat(k))`` there.

Stored modes satisfy ``|k_i| <= N/2 - 1`` and ``k != 0``: the Nyquist planes
are always zero (their conjugate partner is not representable and the
derivative there is ill-defined).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
SNAPSHOT_FORMAT_VERSION = 1


class GridMismatchError(ValueError):
    """Two fields (or a field and a raw array) disagree on grid metadata."""


class WaveVector(NamedTuple):
    k: tuple[int, int, int]
    kphys: tuple[float, float, float]


@dataclass(frozen=True)
class SpectralGrid:
    """Truncated wavevector lattice of the torus ``[0, L)^3``.

    ``n`` is the truncation size N (even, >= 4).  Nonlinear products are
    evaluated on a ``3N/2`` padded grid.
    """

    n: int
    box_l: float = TWO_PI

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid_n must be even and >= 4, got {self.n}")
        if not self.box_l > 0:
            raise ValueError(f"box_l must be positive, got {self.box_l}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def volume(self) -> float:
        return self.box_l**3

    @property
    def pad_n(self) -> int:
        return 3 * self.n // 2

    @property
    def dx_pad(self) -> float:
        return self.box_l / self.pad_n

    @property
    def kmax(self) -> int:
        return self.n // 2 - 1

    @functools.cached_property
    def lattice(self) -> np.ndarray:
        n = self.n
        k = np.rint(np.fft.fftfreq(n) * n).astype(np.int64)
        kz = np.arange(n // 2 + 1, dtype=np.int64)
        return np.stack(np.meshgrid(k, k, kz, indexing="ij"))

    @functools.cached_property
    def kphys(self) -> np.ndarray:
        return (TWO_PI / self.box_l) * self.lattice.astype(float)

    @functools.cached_property
    def ksq(self) -> np.ndarray:
        return np.sum(self.kphys**2, axis=0)

    @functools.cached_property
    def mask(self) -> np.ndarray:
        lat = self.lattice
        inside = np.all(np.abs(lat) < self.n // 2, axis=0)
        inside &= np.any(lat != 0, axis=0)
        return inside

    @functools.cached_property
    def weight(self) -> np.ndarray:
        """Parseval weight: 2 for kz > 0 (implicit conjugate), 1 on kz = 0."""
        w = np.where(self.lattice[2] > 0, 2.0, 1.0)
        return w * self.mask

    @functools.cached_property
    def inv_ksq(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = 1.0 / self.ksq[self.mask]
        return out

    def index_of(self, k: Sequence[int]) -> tuple[int, int, int]:
        """Array index of lattice vector ``k`` (requires ``k[2] >= 0``)."""
        kx, ky, kz = (int(c) for c in k)
        if kz < 0:
            raise ValueError("only kz >= 0 is stored; use -k")
        return (kx % self.n, ky % self.n, kz)

    def wavevector(self, k: Sequence[int]) -> WaveVector:
        k = tuple(int(c) for c in k)
        s = TWO_PI / self.box_l
        return WaveVector(k, (s * k[0], s * k[1], s * k[2]))

    def check_array(self, a: np.ndarray) -> None:
        if a.shape != (3,) + self.shape:
            raise GridMismatchError(
                f"array shape {a.shape} does not match grid N={self.n} "
                f"(expected {(3,) + self.shape})"
            )

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Parseval inner product of two raw coefficient arrays."""
        s = np.einsum("c...,c...->...", a, np.conj(b)).real
        return float(self.volume * np.sum(self.weight * s))


@functools.lru_cache(maxsize=None)
def get_grid(n: int, box_l: float = TWO_PI) -> SpectralGrid:
    """Shared grid instance so cached lattice arrays are reused."""
    return SpectralGrid(int(n), float(box_l))


def hermitian_symmetrize(a: np.ndarray) -> np.ndarray:
    """Enforce ``a(-k) = conj(a(k))`` on the ``kz = 0`` plane (returns a copy)."""
    out = np.array(a, dtype=complex, copy=True)
    plane = out[..., 0]
    partner = np.conj(np.roll(plane[..., ::-1, ::-1], 1, axis=(-2, -1)))
    out[..., 0] = 0.5 * (plane + partner)
    return out


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Immutable divergence-free, zero-mean field on a ``SpectralGrid``.

    Build through ``leray_project``, ``random_field``, ``from_modes`` or
    ``zeros``; the raw constructor trusts its input.
    """

    grid: SpectralGrid
    coeffs: np.ndarray

    def __post_init__(self):
        self.grid.check_array(self.coeffs)
        if self.coeffs.flags.writeable:
            arr = np.array(self.coeffs, dtype=complex)
            arr.flags.writeable = False
            object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, grid: SpectralGrid) -> "VelocityField":
        return cls(grid, np.zeros((3,) + grid.shape, dtype=complex))

    @classmethod
    def from_modes(cls, grid: SpectralGrid, modes: Mapping, tol: float = 1e-12) -> "VelocityField":
        """Field from ``{k: (c1, c2, c3)}``; raises unless already divergence-free."""
        a = mode_array(grid, modes)
        if divergence_residual_array(grid, a) > tol:
            raise ValueError("modes are not divergence-free; use leray_project")
        return cls(grid, a)

    def _same_grid(self, other: "VelocityField") -> None:
        if self.grid != other.grid:
            raise GridMismatchError(
                f"grid mismatch: N={self.grid.n}, L={self.grid.box_l} vs "
                f"N={other.grid.n}, L={other.grid.box_l}"
            )

    def __add__(self, other: "VelocityField") -> "VelocityField":
        self._same_grid(other)
        return VelocityField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        self._same_grid(other)
        return VelocityField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self) -> "VelocityField":
        return VelocityField(self.grid, -self.coeffs)

    def __mul__(self, scalar: float) -> "VelocityField":
        return VelocityField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def multiply(self, multiplier: np.ndarray) -> "VelocityField":
        """Per-mode multiplication by a real array of shape ``grid.shape``."""
        return VelocityField(self.grid, self.coeffs * multiplier[None])

    def to_physical(self, n: int | None = None) -> np.ndarray:
        """Real-space samples on an ``n^3`` grid (default: N)."""
        n = self.grid.n if n is None else n
        pad = np.zeros((3, n, n, n // 2 + 1), dtype=complex)
        _embed(self.coeffs, pad, self.grid.n)
        return sfft.irfftn(pad, s=(n, n, n), axes=(1, 2, 3)) * n**3


def _block_pairs(n_src: int, n_dst: int):
    h = n_src // 2
    return [(slice(0, h), slice(0, h)), (slice(n_src - h + 1, n_src), slice(n_dst - h + 1, n_dst))]


def _embed(src: np.ndarray, dst: np.ndarray, n_src: int) -> None:
    """Copy the stored modes of ``src`` into the low-mode blocks of ``dst``."""
    n_dst = dst.shape[-2]
    h = n_src // 2
    for sx, dx in _block_pairs(n_src, n_dst):
        for sy, dy in _block_pairs(n_src, n_dst):
            dst[..., dx, dy, :h] = src[..., sx, sy, :h]


def _extract(src: np.ndarray, n_dst: int) -> np.ndarray:
    n_src = src.shape[-2]
    h = n_dst // 2
    out = np.zeros(src.shape[:-3] + (n_dst, n_dst, n_dst // 2 + 1), dtype=complex)
    for sx, dx in _block_pairs(n_dst, n_src):
        for sy, dy in _block_pairs(n_dst, n_src):
            out[..., sx, sy, :h] = src[..., dx, dy, :h]
    return out


def mode_array(grid: SpectralGrid, modes: Mapping) -> np.ndarray:
    """Raw coefficient array with the given modes and their conjugates."""
    a = np.zeros((3,) + grid.shape, dtype=complex)
    for k, vec in modes.items():
        k = tuple(int(c) for c in k)
        if k == (0, 0, 0):
            raise ValueError("the k = 0 mode is excluded (zero-mean fields)")
        if max(abs(c) for c in k) >= grid.n // 2:
            raise ValueError(f"mode {k} outside truncation |k_i| <= {grid.kmax}")
        vec = np.asarray(vec, dtype=complex)
        if k[2] < 0:
            k, vec = tuple(-c for c in k), np.conj(vec)
        a[(slice(None),) + grid.index_of(k)] = vec
        if k[2] == 0:
            a[(slice(None),) + grid.index_of(tuple(-c for c in k))] = np.conj(vec)
    return a


def leray_project(f, grid: SpectralGrid | None = None) -> VelocityField:
    """Project a Fourier vector field onto divergence-free modes.

    ``f`` is a ``VelocityField`` or a raw ``(3, N, N, N//2+1)`` array; the
    k = 0 and Nyquist modes are discarded.  Per mode this applies
    ``I - k k^T / |k|^2``.
    """
    if isinstance(f, VelocityField):
        if grid is not None and grid != f.grid:
            raise GridMismatchError("field grid differs from the grid argument")
        grid, a = f.grid, f.coeffs
    else:
        if grid is None:
            raise TypeError("a raw coefficient array needs its grid")
        a = np.asarray(f)
        grid.check_array(a)
    return VelocityField(grid, _project(grid, hermitian_symmetrize(a)))


def _project(grid: SpectralGrid, a: np.ndarray) -> np.ndarray:
    kp = grid.kphys
    kdotu = np.einsum("c...,c...->...", kp, a)
    out = a - kp * (kdotu * grid.inv_ksq)[None]
    out *= grid.mask[None]
    return out


def divergence_residual_array(grid: SpectralGrid, a: np.ndarray) -> float:
    amax = np.max(np.abs(a))
    if amax == 0:
        return 0.0
    div = np.abs(np.einsum("c...,c...->...", grid.kphys, a))
    return float(np.max(div) / amax)


def divergence_residual(u: VelocityField) -> float:
    """``max_k |kphys . u_hat(k)| / max_k |u_hat(k)|`` (0 for the zero field)."""
    return divergence_residual_array(u.grid, u.coeffs)


def inner_product_H(u: VelocityField, v: VelocityField) -> float:
    u._same_grid(v)
    return u.grid.inner(u.coeffs, v.coeffs)


def norm_H(u: VelocityField) -> float:
    return float(np.sqrt(max(inner_product_H(u, u), 0.0)))


def norm_V(u: VelocityField) -> float:
    """``||A^{1/2} u||_H`` computed from the spectrum directly."""
    g = u.grid
    s = np.sum(np.abs(u.coeffs) ** 2, axis=0)
    return float(np.sqrt(g.volume * np.sum(g.weight * g.ksq * s)))


def random_field(
    grid: SpectralGrid,
    radius: float,
    norm_kind: str = "H",
    seed: int | Sequence[int] = 0,
    spectrum_decay: float = 1.0,
    renorm=None,
) -> VelocityField:
    """Seeded Gaussian field with ``|u_hat(k)| ~ |k|^-spectrum_decay``.

    The result is rescaled so that the requested norm (``"H"``, ``"V"`` or
    ``"H1"``; the last needs ``renorm``) equals ``radius``.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3, grid.n, grid.n, grid.n))
    a = sfft.rfftn(noise, axes=(1, 2, 3)) / grid.n**3
    envelope = np.zeros(grid.shape)
    envelope[grid.mask] = grid.ksq[grid.mask] ** (-0.5 * spectrum_decay)
    u = VelocityField(grid, _project(grid, a * envelope[None]))
    return u * (radius / field_norm(u, norm_kind, renorm))


def field_norm(u: VelocityField, norm_kind: str, renorm=None) -> float:
    if norm_kind == "H":
        return norm_H(u)
    if norm_kind == "V":
        return norm_V(u)
    if norm_kind == "H1":
        if renorm is None:
            raise ValueError("norm_kind 'H1' requires renorm parameters")
        from .stokes import norm_H1

        return norm_H1(renorm, u)
    raise ValueError(f"unknown norm kind {norm_kind!r}")


def eigenmode(grid: SpectralGrid, k: Sequence[int], amplitude: float = 1.0) -> VelocityField:
    """Single real Stokes eigenmode on the ``+-k`` pair with ``||u||_H = amplitude``."""
    k = np.asarray(k, dtype=float)
    trial = np.array([1.0, 0.0, 0.0]) if abs(k[0]) < abs(k).max() else np.array([0.0, 1.0, 0.0])
    pol = np.cross(k, trial)
    pol /= np.linalg.norm(pol)
    u = VelocityField.from_modes(grid, {tuple(int(c) for c in k): pol})
    return u * (amplitude / norm_H(u))


@dataclass(frozen=True)
class FieldPair:
    u: VelocityField
    v: VelocityField

    def __post_init__(self):
        self.u._same_grid(self.v)

    @property
    def difference(self) -> VelocityField:
        return self.u - self.v


# -- snapshot files --------------------------------------------------------

_SNAPSHOT_COLUMNS = "k1 k2 k3 re_u1 im_u1 re_u2 im_u2 re_u3 im_u3"


def write_snapshot(u: VelocityField, path: str | Path) -> Path:
    """Write the stored half-lattice as a text table (bit-exact via ``repr``)."""
    g = u.grid
    lat = g.lattice
    lines = [
        "# nsrenorm field snapshot",
        f"format_version = {SNAPSHOT_FORMAT_VERSION}",
        f"grid_n = {g.n}",
        f"box_l = {g.box_l!r}",
        _SNAPSHOT_COLUMNS,
    ]
    for idx in zip(*np.nonzero(g.mask)):
        k = lat[(slice(None),) + idx]
        c = u.coeffs[(slice(None),) + idx]
        vals = " ".join(f"{float(x.real)!r} {float(x.imag)!r}" for x in c)
        lines.append(f"{k[0]} {k[1]} {k[2]} {vals}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path: str | Path) -> VelocityField:
    lines = Path(path).read_text().splitlines()
    header = {}
    body_start = None
    for i, line in enumerate(lines):
        if line.startswith("#"):
            continue
        if line.strip() == _SNAPSHOT_COLUMNS:
            body_start = i + 1
            break
        key, _, val = line.partition("=")
        header[key.strip()] = val.strip()
    if body_start is None or int(header.get("format_version", -1)) != SNAPSHOT_FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{SNAPSHOT_FORMAT_VERSION} field snapshot")
    grid = get_grid(int(header["grid_n"]), float(header["box_l"]))
    a = np.zeros((3,) + grid.shape, dtype=complex)
    for line in lines[body_start:]:
        if not line.strip():
            continue
        parts = line.split()
        k = tuple(int(p) for p in parts[:3])
        vals = [float(p) for p in parts[3:]]
        a[(slice(None),) + grid.index_of(k)] = [complex(vals[2 * c], vals[2 * c + 1]) for c in range(3)]
    return VelocityField(grid, a)
