"""Projected advection ``B(u, v) = P (u . grad) v`` and its trilinear forms.

Products are formed on a ``3N/2`` zero-padded grid.  Stored modes have
``|k_i| <= N/2 - 1`` so quadratic products are alias-free after truncation,
which makes ``b(u, v, v) = 0`` hold to roundoff.
"""

from __future__ import annotations

import math
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .spectral_field import (
    SpectralGrid,
    VelocityField,
    _embed,
    _extract,
    _project,
    inner_product_H,
    norm_H,
    random_field,
)
from .stokes import (
    RenormParams,
    StokesSpectrum,
    apply_A_inverse,
    apply_A_power,
    check_same_grid,
    inner_product_H1,
    norm_H1,
    smoothing_constant,
)

ESTIMATE_STREAM = 0
AUDIT_STREAM = 1


class Workspace:
    """Padded transform buffers for one grid; not shareable across threads."""

    def __init__(self, grid: SpectralGrid):
        m = grid.pad_n
        self.grid = grid
        self.pad = np.zeros((12, m, m, m // 2 + 1), dtype=complex)

    def physical_with_gradient(self, a: np.ndarray, v: np.ndarray):
        """Real-space ``a`` and ``d_j v_i`` on the padded grid.

        Returns ``(a_phys, grad)`` with ``grad[j, i] = d_j v_i``.
        """
        g = self.grid
        m = g.pad_n
        _embed(a, self.pad[0:3], g.n)
        for j in range(3):
            _embed(1j * g.kphys[j][None] * v, self.pad[3 + 3 * j : 6 + 3 * j], g.n)
        phys = sfft.irfftn(self.pad, s=(m, m, m), axes=(1, 2, 3)) * m**3
        return phys[0:3], phys[3:].reshape(3, 3, m, m, m)

    def to_spectral(self, p: np.ndarray) -> np.ndarray:
        m = self.grid.pad_n
        return _extract(sfft.rfftn(p, axes=(1, 2, 3)) / m**3, self.grid.n)


class WorkspacePool:
    """Hands each concurrent caller its own ``Workspace``."""

    def __init__(self, grid: SpectralGrid):
        self.grid = grid
        self._free: queue.SimpleQueue[Workspace] = queue.SimpleQueue()

    @contextmanager
    def acquire(self):
        try:
            ws = self._free.get_nowait()
        except queue.Empty:
            ws = Workspace(self.grid)
        try:
            yield ws
        finally:
            self._free.put(ws)


_local = threading.local()


def default_workspace(grid: SpectralGrid) -> Workspace:
    cache = getattr(_local, "workspaces", None)
    if cache is None:
        cache = _local.workspaces = {}
    ws = cache.get(grid)
    if ws is None:
        ws = cache[grid] = Workspace(grid)
    return ws


def advect_coeffs(u: np.ndarray, v: np.ndarray, grid: SpectralGrid, ws: Workspace | None = None):
    """Projected ``(u . grad) v`` coefficients and ``max |u|`` on the padded grid."""
    ws = ws or default_workspace(grid)
    su, sv = _scale(u), _scale(v)
    if su == 0 or sv == 0:
        return np.zeros_like(u), 0.0
    u_phys, grad = ws.physical_with_gradient(u / su, v / sv)
    conv = np.einsum("jxyz,jixyz->ixyz", u_phys, grad)
    speed = float(np.sqrt(np.max(np.sum(u_phys**2, axis=0)))) * su
    return _project(grid, ws.to_spectral(conv)) * (su * sv), speed


def _scale(a: np.ndarray) -> float:
    # B is bilinear, so products are formed on unit-size inputs and rescaled;
    # certified states are tiny enough that raw products would go subnormal.
    return float(np.max(np.abs(a)))


def bilinear_B(u: VelocityField, v: VelocityField, workspace: Workspace | None = None) -> VelocityField:
    grid = check_same_grid(u, v)
    coeffs, _ = advect_coeffs(u.coeffs, v.coeffs, grid, workspace)
    return VelocityField(grid, coeffs)


def advect_adjoint(v: VelocityField, w: VelocityField, workspace: Workspace | None = None) -> VelocityField:
    """``G`` with ``b(u, v, w) = <u, G>_H`` for every divergence-free ``u``.

    ``G = P (sum_i w_i grad v_i)``.
    """
    grid = check_same_grid(v, w)
    ws = workspace or default_workspace(grid)
    sw, sv = _scale(w.coeffs), _scale(v.coeffs)
    if sw == 0 or sv == 0:
        return VelocityField.zeros(grid)
    w_phys, grad = ws.physical_with_gradient(w.coeffs / sw, v.coeffs / sv)
    g = np.einsum("ixyz,jixyz->jxyz", w_phys, grad)
    return VelocityField(grid, _project(grid, ws.to_spectral(g)) * (sw * sv))


def trilinear_b(u: VelocityField, v: VelocityField, w: VelocityField) -> float:
    return inner_product_H(bilinear_B(u, v), w)


def trilinear_b_renormed(p: RenormParams, u: VelocityField, v: VelocityField, w: VelocityField) -> float:
    return inner_product_H1(p, bilinear_B(u, v), w)


# -- constant of the classical trilinear estimate ---------------------------


class InvalidExponentsError(ValueError):
    pass


@dataclass(frozen=True)
class TrilinearExponents:
    """Exponents ``(alpha1, alpha2, alpha3)`` of the trilinear estimate.

    ``k`` is the domain regularity class (2 for the certificate).
    """

    alpha1: float
    alpha2: float
    alpha3: float
    k: int = 2

    def __post_init__(self):
        a1, a2, a3, k = self.alpha1, self.alpha2, self.alpha3, self.k
        checks = [
            (0 <= a1 <= k, f"0 <= alpha1 <= k (alpha1={a1}, k={k})"),
            (0 <= a2 <= k - 1, f"0 <= alpha2 <= k-1 (alpha2={a2}, k={k})"),
            (0 <= a3 <= k, f"0 <= alpha3 <= k (alpha3={a3}, k={k})"),
            (a1 + a2 + a3 >= 1.5, f"alpha1+alpha2+alpha3 >= 3/2 (sum={a1 + a2 + a3})"),
            (
                (a1, a2, a3) not in {(1.5, 0, 0), (0, 1.5, 0), (0, 0, 1.5)},
                f"(alpha1,alpha2,alpha3) = {(a1, a2, a3)} is an excluded endpoint",
            ),
        ]
        for ok, what in checks:
            if not ok:
                raise InvalidExponentsError(f"violated constraint: {what}")

    @property
    def powers(self) -> tuple[float, float, float]:
        """Powers of A applied to u, v, w in the denominator."""
        return (self.alpha1 / 2, (1 + self.alpha2) / 2, self.alpha3 / 2)


CERTIFICATE_EXPONENTS = TrilinearExponents(0.0, 1.0, 0.5)


def _power_norm(z: float, u: VelocityField) -> float:
    return norm_H(apply_A_power(z, u)) if z else norm_H(u)


def trilinear_ratio(e: TrilinearExponents, u, v, w, b_value: float | None = None) -> float:
    """``|b(u,v,w)| / (||A^{a1/2}u|| ||A^{(1+a2)/2}v|| ||A^{a3/2}w||)``."""
    pu, pv, pw = e.powers
    denom = _power_norm(pu, u) * _power_norm(pv, v) * _power_norm(pw, w)
    if denom == 0:
        return 0.0
    b = trilinear_b(u, v, w) if b_value is None else b_value
    return abs(b) / denom


@dataclass(frozen=True)
class TripleSeed:
    """Replay descriptor: sample index in a seeded stream plus climb steps."""

    seed: int
    stream: int
    index: int
    climb_steps: int


@dataclass(frozen=True)
class ConstantEstimate:
    """Empirical (sample-certified) lower bound on a trilinear constant."""

    value: float
    attaining_triple: TripleSeed | None
    samples: int
    method: str
    exponents: TrilinearExponents = CERTIFICATE_EXPONENTS
    discarded: int = 0
    seed: int = 0

    def with_value(self, value: float, triple: TripleSeed | None) -> "ConstantEstimate":
        return ConstantEstimate(value, triple, self.samples, self.method, self.exponents, self.discarded, self.seed)

    @property
    def provenance(self) -> str:
        return (
            f"sample-certified, not proven ({self.method}, {self.samples} samples, "
            f"seed {self.seed})"
        )


def sample_triple(grid: SpectralGrid, seed: int, stream: int, index: int, radius: float = 1.0,
                  norm_kind: str = "H", renorm: RenormParams | None = None):
    """Three independent random fields with randomly drawn spectral slopes."""
    ss = np.random.SeedSequence([int(seed), int(stream), int(index)])
    rng = np.random.default_rng(ss)
    decays = rng.uniform(0.0, 3.0, size=3)
    children = ss.spawn(3)
    return tuple(
        random_field(grid, radius, norm_kind, children[i], float(decays[i]), renorm) for i in range(3)
    )


def climb(e: TrilinearExponents, u, v, w, steps: int):
    """Block-coordinate ascent on the trilinear ratio.

    Each block update is the exact maximiser over one argument with the
    other two frozen, so the ratio never decreases.
    """
    pu, pv, pw = e.powers
    for _ in range(steps):
        w = _maximiser(bilinear_B(u, v), pw, w)
        v = _maximiser(bilinear_B(u, w), pv, v)
        u = _maximiser(advect_adjoint(v, w), pu, u)
    return u, v, w


def _maximiser(g: VelocityField, power: float, fallback: VelocityField) -> VelocityField:
    x = apply_A_power(-2 * power, g) if power else g
    n = norm_H(x)
    if n == 0 or not math.isfinite(n):
        return fallback
    return x * (1.0 / n)


def estimate_c(
    e: TrilinearExponents,
    grid: SpectralGrid,
    n_samples: int,
    seed: int,
    hill_climb_steps: int = 0,
    radius: float = 1.0,
    include=(),
    workers: int = 1,
    discard_below: float = 1e-12,
) -> ConstantEstimate:
    """Running maximum of the trilinear ratio over seeded random triples.

    With ``hill_climb_steps > 0`` every sample is climbed independently, so
    the estimate is monotone in ``n_samples`` for a fixed seed.  ``include``
    adds explicit triples (e.g. a violating audit sample); ratios below
    ``discard_below`` (skew-degenerate triples such as ``w = v``) are
    discarded rather than counted.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    method = "hill-climb" if hill_climb_steps > 0 else "random-scan"

    def one(i: int) -> tuple[float, int]:
        u, v, w = sample_triple(grid, seed, ESTIMATE_STREAM, i, radius)
        if hill_climb_steps:
            u, v, w = climb(e, u, v, w, hill_climb_steps)
        return trilinear_ratio(e, u, v, w), i

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_samples)))
    else:
        results = [one(i) for i in range(n_samples)]

    best, best_triple, discarded = 0.0, None, 0
    for ratio, i in results:
        if ratio < discard_below:
            discarded += 1
        elif ratio > best:
            best, best_triple = ratio, TripleSeed(seed, ESTIMATE_STREAM, i, hill_climb_steps)
    for triple in include:
        if isinstance(triple, TripleSeed):
            ratio = replay_ratio(e, grid, triple, radius)
        else:
            ratio = trilinear_ratio(e, *triple)
        if ratio < discard_below:
            discarded += 1
        elif ratio > best:
            best = ratio
            best_triple = triple if isinstance(triple, TripleSeed) else None
    return ConstantEstimate(best, best_triple, n_samples + len(include), method, e, discarded, seed)


def replay_triple(e: TrilinearExponents, grid: SpectralGrid, t: TripleSeed, radius: float = 1.0):
    u, v, w = sample_triple(grid, t.seed, t.stream, t.index, radius)
    return climb(e, u, v, w, t.climb_steps) if t.climb_steps else (u, v, w)


def replay_ratio(e: TrilinearExponents, grid: SpectralGrid, t: TripleSeed, radius: float = 1.0) -> float:
    return trilinear_ratio(e, *replay_triple(e, grid, t, radius))


# -- sampling audits --------------------------------------------------------


@dataclass
class AuditResult:
    """Outcome of a sampling audit of ``lhs <= bound``.

    Margins (``lhs - bound``) are kept so near-misses stay visible.
    """

    name: str
    samples: int = 0
    violations: int = 0
    worst_ratio: float = -math.inf
    worst_margin: float = -math.inf
    violating_seeds: list = field(default_factory=list)
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, lhs: float, bound: float, scale: float, seed_info=None, rel_tol: float = 1e-10) -> None:
        self.samples += 1
        margin = lhs - bound
        if bound != 0 and math.isfinite(bound):
            self.worst_ratio = max(self.worst_ratio, lhs / abs(bound))
        self.worst_margin = max(self.worst_margin, margin / scale if scale > 0 else margin)
        if margin > rel_tol * scale:
            self.violations += 1
            if seed_info is not None:
                self.violating_seeds.append(seed_info)


def audit_trilinear_bound(est: ConstantEstimate, grid: SpectralGrid, n_samples: int, seed: int) -> AuditResult:
    """Check ``|b| <= c * (power norms)`` on samples disjoint from the estimation stream."""
    e = est.exponents
    res = AuditResult("trilinear_bound")
    for i in range(n_samples):
        u, v, w = sample_triple(grid, seed, AUDIT_STREAM, i)
        pu, pv, pw = e.powers
        bound = est.value * _power_norm(pu, u) * _power_norm(pv, v) * _power_norm(pw, w)
        lhs = abs(trilinear_b(u, v, w))
        res.record(lhs, bound, bound, TripleSeed(seed, AUDIT_STREAM, i, 0))
    return res


def self_consistent_c(est: ConstantEstimate, grid: SpectralGrid, audit: AuditResult) -> ConstantEstimate:
    """Re-estimate ``c`` with the audit's violating samples included."""
    if audit.passed:
        return est
    best, best_t = est.value, est.attaining_triple
    for t in audit.violating_seeds:
        r = replay_ratio(est.exponents, grid, t)
        if r > best:
            best, best_t = r, t
    return est.with_value(best, best_t)


@dataclass(frozen=True)
class RenormedBoundConstants:
    """Prefactors of the renormed trilinear bounds for one ``RenormParams``."""

    c: float
    c1: float
    c2: float
    M: float
    r: float

    @classmethod
    def build(cls, c: float, p: RenormParams, spec: StokesSpectrum) -> "RenormedBoundConstants":
        c1 = smoothing_constant(0.25, p, spec).value
        c2 = smoothing_constant(1.0, p, spec).value
        return cls(float(c), c1, c2, p.M, p.r)

    @property
    def k_inverse(self) -> float:
        """``M^3 c c1 / r^{1/4}`` (bound on ``<A^{-1}B(u,v), w>_{H,1}``)."""
        with np.errstate(over="ignore"):
            return float(np.float64(self.M) ** 3 * self.c * self.c1 / self.r**0.25)

    @property
    def k_direct(self) -> float:
        """``M^4 c c1 c2 / r^{5/4}`` (bound on ``<B(u,v), w>_{H,1}``)."""
        with np.errstate(over="ignore"):
            return float(np.float64(self.M) ** 4 * self.c * self.c1 * self.c2 / self.r**1.25)


def audit_renormed_bounds(
    k: RenormedBoundConstants, p: RenormParams, grid: SpectralGrid, n_samples: int, seed: int
) -> list[AuditResult]:
    """Sampling audit of the inverse-form, direct-form and operator-norm bounds."""
    inv = AuditResult("renormed_inverse_form")
    direct = AuditResult("renormed_direct_form")
    opn = AuditResult("renormed_operator_norm")
    for i in range(n_samples):
        u, v, w = sample_triple(grid, seed, AUDIT_STREAM + 1, i, 1.0, "H1", p)
        tag = TripleSeed(seed, AUDIT_STREAM + 1, i, 0)
        nu_, nv, nw = norm_H1(p, u), norm_H1(p, v), norm_H1(p, w)
        buv = bilinear_B(u, v)
        bvu = bilinear_B(v, u)
        b_inv = k.k_inverse * nu_ * nv * nw
        inv.record(abs(inner_product_H1(p, apply_A_inverse(buv), w)), b_inv, b_inv, tag)
        b_dir = k.k_direct * nu_ * nv * nw
        direct.record(abs(inner_product_H1(p, buv, w)), b_dir, b_dir, tag)
        b_op = k.k_direct * nu_ * nv
        opn.record(max(norm_H1(p, buv), norm_H1(p, bvu)), b_op, b_op, tag)
    return [inv, direct, opn]


def audit_skew_symmetry(grid: SpectralGrid, n_samples: int, seed: int, tol: float = 1e-10) -> AuditResult:
    """``|b(u,v,v)| <= tol ||u||_H ||v||_H ||v||_V`` on random pairs."""
    from .spectral_field import norm_V

    res = AuditResult("skew_symmetry")
    for i in range(n_samples):
        u, v, _ = sample_triple(grid, seed, AUDIT_STREAM + 2, i)
        scale = norm_H(u) * norm_H(v) * norm_V(v)
        res.record(abs(trilinear_b(u, v, v)) / scale, tol, 1.0, TripleSeed(seed, AUDIT_STREAM + 2, i, 0), rel_tol=0.0)
    return res
