"""Time integration of ``du/dt = -nu A u - B(u, u) + P f(t)``.

ETDRK2 (Cox-Matthews): the diagonal linear part is integrated exactly,
the nonlinear term and forcing through the phi-function weights.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import BallHypothesisError, CertificateReport, membership
from .forcing import ForcingModel
from .nonlinear import Workspace, advect_coeffs
from .spectral_field import (
    SpectralGrid,
    VelocityField,
    divergence_residual,
    inner_product_H,
    norm_H,
    norm_V,
    write_snapshot,
)
from .stokes import RenormParams, StokesSpectrum, norm_H1, r_hat

TRAJECTORY_SCHEMA = "trajectory/1"
TRAJECTORY_COLUMNS = (
    "t", "norm_H", "norm_H1", "norm_V", "energy", "in_B", "div_residual", "dt", "forcing_power",
)
DT_SAFETY = 0.25
MAX_HALVINGS = 40


class TimeStepError(ValueError):
    def __init__(self, dt: float, dt_max: float):
        super().__init__(f"time step {dt!r} exceeds the advective limit; use dt <= {dt_max!r}")
        self.dt = dt
        self.dt_max = dt_max


def _phi_series(z: np.ndarray):
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2``, stable near 0."""
    small = np.abs(z) < 0.05
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zs) / zs)
    phi2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720, (np.expm1(zs) - zs) / zs**2)
    return phi1, phi2


@functools.lru_cache(maxsize=32)
def etd_weights(grid: SpectralGrid, nu: float, dt: float):
    """``(e^{L dt}, dt*phi1(L dt), dt*phi2(L dt))`` with ``L = -nu |k|^2``."""
    z = -nu * grid.ksq * dt
    phi1, phi2 = _phi_series(z)
    m = grid.mask
    return np.exp(z) * m, dt * phi1 * m, dt * phi2 * m


def advective_dt_limit(grid: SpectralGrid, speed: float) -> float:
    return grid.dx_pad / speed if speed > 0 else math.inf


def default_dt(u: VelocityField, nu: float, nonlinear: bool = True) -> float:
    """``0.25 min(dx_pad / max|u|, 1/(nu lambda_max))``."""
    g = u.grid
    lam_max = StokesSpectrum.from_grid(g).lambda_max
    limit = 1.0 / (nu * lam_max)
    if nonlinear:
        speed = float(np.max(np.linalg.norm(u.to_physical(g.pad_n), axis=0)))
        limit = min(limit, advective_dt_limit(g, speed))
    return DT_SAFETY * limit


def _rhs(u: np.ndarray, t: float, f: ForcingModel, grid: SpectralGrid, nonlinear: bool, ws):
    out = np.zeros_like(u) if f.is_zero else f.at(t, grid).coeffs.copy()
    speed = 0.0
    if nonlinear:
        conv, speed = advect_coeffs(u, u, grid, ws)
        out -= conv
    return out, speed


def step(u: VelocityField, t: float, dt: float, nu: float, f: ForcingModel,
         nonlinear: bool = True, workspace: Workspace | None = None) -> VelocityField:
    """One ETDRK2 step from ``(u, t)`` to ``t + dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    g = u.grid
    e, p1, p2 = etd_weights(g, float(nu), float(dt))
    n0, speed = _rhs(u.coeffs, t, f, g, nonlinear, workspace)
    if nonlinear and dt > advective_dt_limit(g, speed):
        raise TimeStepError(dt, advective_dt_limit(g, speed))
    a = e * u.coeffs + p1 * n0
    n1, _ = _rhs(a, t + dt, f, g, nonlinear, workspace)
    return VelocityField(g, a + p2 * (n1 - n0))


@dataclass
class TrajectoryRecord:
    rows: list = field(default_factory=list)
    verdict: str = "NO-CLAIM"
    sup_norm_H1: float = 0.0
    threshold: float | None = None
    violation: dict | None = None
    violation_state: VelocityField | None = None
    final_state: VelocityField | None = None
    halvings: int = 0

    def column(self, name: str) -> np.ndarray:
        i = TRAJECTORY_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={TRAJECTORY_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in self.rows:
            w.writerow([repr(x) if isinstance(x, float) else str(int(x)) for x in r])
        return buf.getvalue()


def _row(u, t, dt, renorm, cert, f) -> tuple:
    nh = norm_H(u)
    n1 = norm_H1(renorm, u)
    in_b = membership(u, cert).in_B if cert is not None and cert.feasible else False
    power = 0.0 if f.is_zero else inner_product_H(f.at(t, u.grid), u)
    return (float(t), nh, n1, norm_V(u), 0.5 * nh * nh, bool(in_b), divergence_residual(u), float(dt), power)


def simulate(
    u0: VelocityField,
    nu: float,
    forcing: ForcingModel,
    t_end: float,
    dt: float | None = None,
    cert: CertificateReport | None = None,
    renorm: RenormParams | None = None,
    nonlinear: bool = True,
    sample_every: int = 1,
    invariance_tol: float = 1e-6,
    t0: float = 0.0,
    checkpoint_every: int = 0,
    checkpoint_dir: str | Path | None = None,
) -> TrajectoryRecord:
    """Integrate to ``t_end`` and monitor ``||u||_{H,1}`` against the certified ball.

    With a feasible ``cert`` the initial state must lie in the ball of
    radius ``u_+/2`` (and in the annulus ``||u|| >= u_-`` when forcing is
    present).  The run stops early with verdict ``VIOLATION`` once the norm
    exceeds ``u_+/2 (1 + invariance_tol)``.
    """
    g = u0.grid
    if cert is not None and cert.feasible:
        renorm = cert.renorm
        m = membership(u0, cert)
        if not m.in_B:
            raise BallHypothesisError(
                f"initial state refused: in_B is false (||u0||_H1 = {m.norm_H1!r} > u_plus/2 = {cert.ball_radius!r})"
            )
        if cert.f_sup > 0 and not m.in_annulus_B_minus:
            raise BallHypothesisError(
                f"initial state refused: in_annulus_B_minus is false (||u0||_H1 = {m.norm_H1!r} < u_minus = {cert.u_minus!r})"
            )
    elif renorm is None:
        spec = StokesSpectrum.from_grid(g)
        renorm = RenormParams.build(spec, r_hat(spec))
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    auto_dt = dt is None
    h = default_dt(u0, nu, nonlinear) if auto_dt else float(dt)

    rec = TrajectoryRecord()
    certified = cert is not None and cert.feasible
    if certified:
        rec.threshold = cert.ball_radius * (1 + invariance_tol)
        rec.verdict = "INVARIANT"
    ckpt = Path(checkpoint_dir) if checkpoint_every and checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)

    ws = Workspace(g)
    u, t, n = u0, float(t0), 0
    t_base, k = t, 0  # t = t_base + k h between halvings, avoiding drift
    rec.rows.append(_row(u, t, 0.0, renorm, cert, forcing))
    rec.sup_norm_H1 = rec.rows[-1][2]
    t_stop = t0 + t_end
    while t < t_stop - 1e-12 * max(1.0, abs(t_stop)):
        hs = min(h, t_stop - t)
        try:
            u = step(u, t, hs, nu, forcing, nonlinear, ws)
        except TimeStepError:
            rec.halvings += 1
            if rec.halvings > MAX_HALVINGS:
                raise
            h *= 0.5
            t_base, k = t, 0
            continue
        k += 1
        t = t_base + k * h if hs == h else t_stop
        n += 1
        if ckpt and n % checkpoint_every == 0:
            write_snapshot(u, ckpt / f"step_{n:08d}.snap")
        last = t >= t_stop - 1e-12 * max(1.0, abs(t_stop))
        x = norm_H1(renorm, u)
        rec.sup_norm_H1 = max(rec.sup_norm_H1, x)
        breach = certified and x > rec.threshold
        if n % sample_every == 0 or last or breach:
            rec.rows.append(_row(u, t, hs, renorm, cert, forcing))
        if breach:
            rec.verdict = "VIOLATION"
            rec.violation = {"t": t, "step": n, "norm_H1": x, "threshold": rec.threshold}
            rec.violation_state = u
            break
    rec.final_state = u
    return rec


def energy_balance_audit(record: TrajectoryRecord, nu: float, f: ForcingModel | None = None) -> float:
    """Worst relative residual of ``dE/dt + nu ||u||_V^2 - <Pf, u>_H``.

    The forcing power is taken from the record (it is sampled there), so
    ``f`` only serves as a consistency check.  ``dE/dt`` uses fourth-order
    central differences on uniform rows (interior rows only) and
    second-order ``np.gradient`` otherwise.
    """
    t = record.column("t")
    if len(t) < 5:
        raise ValueError(f"energy audit needs at least 5 rows, got {len(t)}")
    e = record.column("energy")
    v2 = nu * record.column("norm_V") ** 2
    p = record.column("forcing_power")
    if f is not None and f.is_zero and np.any(p != 0):
        raise ValueError("record carries forcing power but forcing is zero")
    h = np.diff(t)
    if np.allclose(h, h[0], rtol=1e-9, atol=0):
        de = (e[:-4] - 8 * e[1:-3] + 8 * e[3:-1] - e[4:]) / (12 * h[0])
        sl = slice(2, -2)
    else:
        de = np.gradient(e, t, edge_order=2)
        sl = slice(None)
    res = np.abs(de + v2[sl] - p[sl])
    scale = v2[sl]
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(res / scale))
