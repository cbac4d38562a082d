"""Dissipativity certificate for the preconditioned drift ``J(u, t)``.

``J(u, t) = -u - nu^-1 A^-1 B(u, u) + nu^-1 A^-1 P f(t)`` so that the
projected equations read ``du/dt = nu A J(u, t)``.  The certificate turns
the trilinear constants into the thresholds ``delta``, ``gamma``,
``u_-``/``u_+``, the margins ``alpha``/``a`` and the critical viscosity.
Scalar algebra runs in mpmath so ``M^3`` and ``M^4`` do not overflow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import mpmath
import numpy as np

from .forcing import ForcingModel
from .nonlinear import AuditResult, ConstantEstimate, bilinear_B
from .spectral_field import SpectralGrid, VelocityField, random_field
from .stokes import (
    RenormParams,
    StokesSpectrum,
    apply_A,
    apply_A_inverse,
    apply_A_power,
    inner_product_H1,
    log10_M,
    norm_H1,
    r_hat,
    smoothing_constant,
)

CERTIFICATE_SCHEMA = "certificate/1"
MEMBERSHIP_RTOL = 1e-12
AUDIT_RTOL = 1e-10
_DPS = 60


class BallHypothesisError(ValueError):
    """Inputs lie outside the ball where the dissipativity claim is made."""


class InfeasibleCertificateError(ValueError):
    pass


@dataclass(frozen=True)
class CertificateReport:
    grid_n: int
    box_l: float
    nu: float
    r_mode: str
    omega: float
    r: float
    r_hat: float
    M: float
    log10_M: float
    lambda1: float
    lambda_max: float
    c: float
    c1: float
    c2: float
    c3: float
    f_sup: float
    d: float
    delta: float
    gamma: float
    nu_min: float
    feasible: bool
    u_minus: float | None = None
    u_plus: float | None = None
    alpha: float | None = None
    a: float | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def renorm(self) -> RenormParams:
        return RenormParams(self.omega, self.r, self.M)

    @property
    def ball_radius(self) -> float:
        if not self.feasible:
            raise InfeasibleCertificateError("infeasible certificate has no invariant ball")
        return 0.5 * self.u_plus

    # -- serialisation ----------------------------------------------------

    def to_row(self) -> dict:
        return {name: _fmt(getattr(self, name)) for name in CERTIFICATE_COLUMNS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={CERTIFICATE_SCHEMA}\n")
        w = csv.DictWriter(buf, fieldnames=CERTIFICATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.to_row())
        return buf.getvalue()

    def to_kv(self) -> str:
        lines = [f"schema = {CERTIFICATE_SCHEMA}"]
        lines += [f"{k} = {v}" for k, v in self.to_row().items()]
        lines += [f"provenance.{k} = {v}" for k, v in sorted(self.provenance.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "CertificateReport":
        kv, prov = {}, {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key.startswith("provenance."):
                prov[key[len("provenance."):]] = val
            else:
                kv[key] = val
        if kv.get("schema") != CERTIFICATE_SCHEMA:
            raise ValueError(f"not a {CERTIFICATE_SCHEMA} report")
        types = {f.name: f.type for f in fields(cls)}
        args = {name: _parse(kv[name], types[name]) for name in CERTIFICATE_COLUMNS}
        return cls(**args, provenance=prov)


CERTIFICATE_COLUMNS = [
    f.name for f in fields(CertificateReport) if f.name != "provenance"
]


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s: str, typ: str):
    if s == "NA":
        return None
    if typ == "bool":
        return s == "true"
    if typ == "int":
        return int(s)
    if typ == "str":
        return s
    return float(s)


# -- closed-form algebra ----------------------------------------------------


def dissipativity_roots(delta, gamma):
    """Roots of ``x^2/delta - x + gamma*delta/4 = 0``.

    Returns ``(feasible, u_minus, u_plus, alpha)``; feasibility needs the
    strict inequality ``gamma < 1`` (distinct real roots), otherwise the
    roots are ``None``.
    """
    with mpmath.workdps(_DPS):
        delta, gamma = mpmath.mpf(delta), mpmath.mpf(gamma)
        if not gamma < 1:
            return False, None, None, None
        s = mpmath.sqrt(1 - gamma)
        # 1 - s = gamma / (1 + s) avoids cancellation for small gamma
        small = gamma / (1 + s)
        return True, delta / 2 * small, delta / 2 * (1 + s), small / 2


def build_certificate(
    nu: float,
    forcing: ForcingModel,
    constants,
    renorm: RenormParams,
    spec: StokesSpectrum,
    r_mode: str = "manual",
    grid: SpectralGrid | None = None,
) -> CertificateReport:
    """Fill every certificate quantity from its closed form.

    ``constants`` is the trilinear constant (a ``ConstantEstimate`` or a
    plain float); ``c1``, ``c2``, ``c3`` are the smoothing constants at
    z = 1/4, 1, 1 for ``renorm``.  An infeasible certificate
    (``gamma >= 1``) is returned with ``feasible = False`` and no roots.
    """
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    if forcing.renorm != renorm:
        raise ValueError("forcing was normalised under different renorming parameters")
    rh = r_hat(spec, renorm.omega)
    if r_mode == "auto_r_hat" and not math.isclose(renorm.r, rh, rel_tol=1e-12):
        raise ValueError(f"r_mode auto_r_hat needs r = r_hat = {rh}, got {renorm.r}")
    c_val = constants.value if isinstance(constants, ConstantEstimate) else float(constants)
    if not c_val > 0:
        raise ValueError("trilinear constant must be positive")
    c1 = smoothing_constant(0.25, renorm, spec).value
    c2 = smoothing_constant(1.0, renorm, spec).value
    c3 = c2
    lam1 = spec.lambda1
    f = forcing.f_sup

    with mpmath.workdps(_DPS):
        M = mpmath.exp((mpmath.mpf(spec.lambda_max) - renorm.omega) * renorm.r)
        k4 = M**3 * c_val * c1
        r4 = mpmath.mpf(renorm.r) ** mpmath.mpf(0.25)
        delta = nu * r4 / k4
        gamma = 4 * k4 * f / (mpmath.mpf(nu) ** 2 * lam1 * r4)
        nu_min = mpmath.sqrt(4 * k4 * f / (r4 * lam1))
        feasible, um, up, alpha = dissipativity_roots(delta, gamma)
        a = nu * lam1 * 2 * alpha if feasible else None

    prov = {
        "c": constants.provenance if isinstance(constants, ConstantEstimate) else "supplied",
        "c1": "smoothing constant z=1/4 (exact on truncation)",
        "c2": "smoothing constant z=1 (exact on truncation)",
        "c3": "smoothing constant z=1 (interpretation)",
        "M": (
            f"exact on truncation N={grid.n if grid else '?'}; grows without bound with N "
            "(no truncation-independent M exists on the diagonal model)"
        ),
        "domain": "periodic torus surrogate, not a Dirichlet domain",
    }
    if isinstance(constants, ConstantEstimate) and constants.attaining_triple is not None:
        t = constants.attaining_triple
        prov["c.attaining_triple"] = f"seed={t.seed} stream={t.stream} index={t.index} climb={t.climb_steps}"

    def fl(x):
        return None if x is None else float(x)

    return CertificateReport(
        grid_n=grid.n if grid else 0,
        box_l=grid.box_l if grid else float("nan"),
        nu=float(nu),
        r_mode=r_mode,
        omega=renorm.omega,
        r=renorm.r,
        r_hat=rh,
        M=float(M) if M < mpmath.mpf("1e308") else math.inf,
        log10_M=log10_M(spec, renorm.r, renorm.omega),
        lambda1=lam1,
        lambda_max=spec.lambda_max,
        c=c_val,
        c1=c1,
        c2=c2,
        c3=c3,
        f_sup=f,
        d=forcing.d,
        delta=fl(delta),
        gamma=fl(gamma),
        nu_min=fl(nu_min),
        feasible=bool(feasible),
        u_minus=fl(um),
        u_plus=fl(up),
        alpha=fl(alpha),
        a=fl(a),
        provenance=prov,
    )


# -- J and its dissipativity checks -------------------------------------------


def apply_J(u: VelocityField, t: float, nu: float, f: ForcingModel, nonlinear: bool = True) -> VelocityField:
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    drift = f.at(t, u.grid)
    if nonlinear:
        drift = drift - bilinear_B(u, u)
    return apply_A_inverse(drift) * (1.0 / nu) - u


def apply_AJ(u: VelocityField, t: float, nu: float, f: ForcingModel, nonlinear: bool = True) -> VelocityField:
    """``nu A J(u, t) = -nu A u - B(u, u) + P f(t)``."""
    out = f.at(t, u.grid) - apply_A(u) * nu
    if nonlinear:
        out = out - bilinear_B(u, u)
    return out


@dataclass(frozen=True)
class BallMembership:
    in_D_of_A: bool
    in_B: bool
    in_annulus_B_minus: bool
    norm_H1: float


def membership(u: VelocityField, cert: CertificateReport) -> BallMembership:
    """Closed-ball predicates (relative slack ``MEMBERSHIP_RTOL``)."""
    x = norm_H1(cert.renorm, u)
    if not cert.feasible:
        return BallMembership(True, False, False, x)
    half = 0.5 * cert.u_plus * (1 + MEMBERSHIP_RTOL)
    in_b = x <= half
    in_ann = in_b and x >= cert.u_minus * (1 - MEMBERSHIP_RTOL)
    return BallMembership(True, in_b, in_ann, x)


def _require_feasible(cert: CertificateReport) -> None:
    if not cert.feasible:
        raise InfeasibleCertificateError(f"certificate infeasible: gamma = {cert.gamma} >= 1")


def check_zero_dissipative(u: VelocityField, t: float, cert: CertificateReport, f: ForcingModel) -> float:
    """``<J(u, t), u>_{H,1}``; non-positive on ``u_- <= ||u||_{H,1} <= u_+`` if the claim holds."""
    _require_feasible(cert)
    return inner_product_H1(cert.renorm, apply_J(u, t, cert.nu, f), u)


def _in_ball_pair(u, v, cert):
    for name, x in (("u", u), ("v", v)):
        m = membership(x, cert)
        if not m.in_B:
            raise BallHypothesisError(
                f"{name} has ||.||_H1 = {m.norm_H1!r} > u_plus/2 = {cert.ball_radius!r}"
            )


def check_strong_dissipative(u, v, t, cert: CertificateReport, f: ForcingModel) -> tuple[float, float]:
    """``(<J(u)-J(v), u-v>_{H,1}, -alpha ||u-v||_{H,1}^2)``."""
    _require_feasible(cert)
    _in_ball_pair(u, v, cert)
    p = cert.renorm
    d = u - v
    lhs = inner_product_H1(p, apply_J(u, t, cert.nu, f) - apply_J(v, t, cert.nu, f), d)
    return lhs, -cert.alpha * norm_H1(p, d) ** 2


def check_AJ_dissipative(u, v, t, cert: CertificateReport, f: ForcingModel, nonlinear: bool = True):
    """``(<nuAJ(u) - nuAJ(v), u-v>_{H,1}, -a ||u-v||_{H,1}^2)``.

    ``nonlinear=False`` drops ``B`` (diagnostic: the left side is then
    ``-nu ||A^{1/2}(u-v)||_{H,1}^2``).
    """
    _require_feasible(cert)
    _in_ball_pair(u, v, cert)
    p = cert.renorm
    d = u - v
    lhs = inner_product_H1(p, apply_AJ(u, t, cert.nu, f, nonlinear) - apply_AJ(v, t, cert.nu, f, nonlinear), d)
    return lhs, -cert.a * norm_H1(p, d) ** 2


@dataclass(frozen=True)
class HolderAudit:
    worst_ratio: float
    bound: float
    pairs: int

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.bound * (1 + 1e-8) + 1e-300


def holder_audit(u: VelocityField, f: ForcingModel, nu: float, times, renorm: RenormParams | None = None,
                 lambda1: float | None = None) -> HolderAudit:
    """Worst ``||J(u,t) - J(u,tau)||_{H,1} / |t - tau|^theta`` over time pairs.

    Equal times are skipped.  The bound is ``d / (nu lambda1)``.
    """
    if f.theta is None:
        raise ValueError("forcing declares no Hölder data (theta is None)")
    p = renorm or f.renorm
    if lambda1 is None:
        from .stokes import StokesSpectrum

        lambda1 = StokesSpectrum.from_grid(u.grid).lambda1
    js = [apply_J(u, t, nu, f) for t in times]
    worst, pairs = 0.0, 0
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            dt = abs(times[i] - times[j])
            if dt == 0:
                continue
            pairs += 1
            worst = max(worst, norm_H1(p, js[i] - js[j]) / dt**f.theta)
    return HolderAudit(float(worst), float(f.d / (nu * lambda1)), pairs)


# -- sampling audits over a certificate --------------------------------------


def _seeded(seed: int, stream: int, i: int):
    return np.random.SeedSequence([int(seed), 100 + stream, int(i)])


def _ball_sample(grid, cert, seed, stream, i, lo=0.0, hi=None):
    ss = _seeded(seed, stream, i)
    rng = np.random.default_rng(ss)
    hi = cert.ball_radius if hi is None else hi
    radius = lo + (hi - lo) * rng.uniform(0.05, 1.0)
    decay = rng.uniform(0.0, 3.0)
    return random_field(grid, radius, "H1", ss.spawn(1)[0], decay, cert.renorm)


def audit_zero_dissipative(grid, cert, f, n_samples: int, seed: int, t: float = 0.0,
                           radius: float | None = None) -> AuditResult:
    """``<J(u), u>_{H,1} <= 0`` on sampled ``u`` (on the sphere ``radius`` if given)."""
    res = AuditResult("zero_dissipative")
    for i in range(n_samples):
        if radius is None:
            u = _ball_sample(grid, cert, seed, 0, i, cert.u_minus, cert.u_plus)
        else:
            ss = _seeded(seed, 0, i)
            u = random_field(grid, radius, "H1", ss, np.random.default_rng(ss).uniform(0, 3), cert.renorm)
        x2 = norm_H1(cert.renorm, u) ** 2
        res.record(check_zero_dissipative(u, t, cert, f), 0.0, x2, ("zero_dissipative", seed, i))
    return res


def audit_strong_dissipative(grid, cert, f, n_pairs: int, seed: int, t: float = 0.0) -> AuditResult:
    res = AuditResult("strong_dissipative")
    for i in range(n_pairs):
        u = _ball_sample(grid, cert, seed, 1, 2 * i)
        v = _ball_sample(grid, cert, seed, 1, 2 * i + 1)
        lhs, bound = check_strong_dissipative(u, v, t, cert, f)
        scale = norm_H1(cert.renorm, u - v) ** 2
        res.record(lhs, bound, scale, ("strong_dissipative", seed, i))
    return res


def audit_AJ_dissipative(grid, cert, f, n_pairs: int, seed: int, t: float = 0.0) -> AuditResult:
    res = AuditResult("aj_dissipative")
    if cert.r_mode != "auto_r_hat":
        res.note = "claim stated for r = r_hat only; audited at manual r for information"
    for i in range(n_pairs):
        u = _ball_sample(grid, cert, seed, 2, 2 * i)
        v = _ball_sample(grid, cert, seed, 2, 2 * i + 1)
        lhs, bound = check_AJ_dissipative(u, v, t, cert, f)
        scale = cert.nu * cert.lambda1 * norm_H1(cert.renorm, u - v) ** 2
        res.record(lhs, bound, scale, ("aj_dissipative", seed, i))
    return res


def audit_holder(grid, cert, f, seed: int, n_times: int = 9) -> AuditResult:
    """Hölder audit over a time grid straddling the forcing's kink ``t0``."""
    res = AuditResult("holder_J")
    u = _ball_sample(grid, cert, seed, 3, 0)
    times = [float(x) for x in f.t0 + np.linspace(-1.0, 1.0, n_times) ** 3]
    h = holder_audit(u, f, cert.nu, times, cert.renorm, cert.lambda1)
    res.record(h.worst_ratio, h.bound, h.bound if h.bound > 0 else 1.0, ("holder_J", seed, 0), rel_tol=1e-8)
    return res


def audit_smoothing_and_equivalence(grid, p: RenormParams, spec: StokesSpectrum, n_samples: int,
                                    seed: int, zs=(0.25, 0.5, 1.0)) -> list[AuditResult]:
    """Norm equivalence, smoothing bounds and the ``A^-1`` bound on samples."""
    equiv = AuditResult("norm_equivalence")
    inv = AuditResult("A_inverse_H1")
    smooth = {z: AuditResult(f"smoothing_z={z}") for z in zs}
    consts = {z: smoothing_constant(z, p, spec) for z in zs}
    for i in range(n_samples):
        ss = _seeded(seed, 4, i)
        decay = np.random.default_rng(ss).uniform(0.0, 3.0)
        u = random_field(grid, 1.0, "H", ss.spawn(1)[0], decay)
        from .spectral_field import norm_H

        nh, n1 = norm_H(u), norm_H1(p, u)
        equiv.record(n1, nh, nh, ("equiv_lower", seed, i))
        equiv.record(nh, p.M * n1, nh, ("equiv_upper", seed, i))
        inv.record(norm_H1(p, apply_A_inverse(u)), n1 / spec.lambda1, n1 / spec.lambda1, ("A_inverse", seed, i))
        for z in zs:
            bound = p.M * consts[z].value / p.r**z * n1
            smooth[z].record(norm_H1(p, apply_A_power(z, u)), bound, bound, ("smoothing", z, seed, i))
    return [equiv, inv, *smooth.values()]


def report_dict(cert: CertificateReport) -> dict:
    return asdict(cert)
