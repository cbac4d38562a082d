"""Experiment orchestration: certify, simulate, sweep, OU validation, replay.

Every command writes its CSVs, the resolved config and a ``manifest.json``
listing each output with its sha256, so ``replay`` can re-run and compare
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import mpmath

from . import __version__
from .certificate import (
    CERTIFICATE_SCHEMA,
    BallHypothesisError,
    CertificateReport,
    audit_AJ_dissipative,
    audit_holder,
    audit_smoothing_and_equivalence,
    audit_strong_dissipative,
    audit_zero_dissipative,
    build_certificate,
)
from .config import CONFIG_SCHEMA, RunConfig, parse_mode
from .evolution import TRAJECTORY_SCHEMA, simulate
from .forcing import ForcingModel
from .nonlinear import (
    CERTIFICATE_EXPONENTS,
    AuditResult,
    ConstantEstimate,
    RenormedBoundConstants,
    audit_renormed_bounds,
    audit_skew_symmetry,
    audit_trilinear_bound,
    estimate_c,
    self_consistent_c,
)
from .ou import ou_validation_suite
from .spectral_field import SpectralGrid, eigenmode, get_grid, random_field, write_snapshot
from .stokes import RenormParams, StokesSpectrum, r_hat, smoothing_constant

AUDIT_SCHEMA = "audits/1"
SWEEP_SCHEMA = "sweep/1"
MANIFEST_SCHEMA = "manifest/1"
SCHEMAS = (CONFIG_SCHEMA, CERTIFICATE_SCHEMA, AUDIT_SCHEMA, TRAJECTORY_SCHEMA, SWEEP_SCHEMA, MANIFEST_SCHEMA)

SELF_CONSISTENCY_ROUNDS = 5

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_AUDIT, EXIT_INVARIANCE = 0, 1, 2, 3, 4

AUDIT_COLUMNS = ("name", "samples", "violations", "worst_ratio", "worst_margin", "passed", "note")
SWEEP_NU_COLUMNS = (
    "cell", "grid_n", "nu", "feasible", "gamma", "delta", "u_minus", "u_plus", "nu_min",
    "f_sup", "log10_M", "status", "error",
)
SWEEP_M_COLUMNS = ("cell", "grid_n", "lambda1", "lambda_max", "r", "omega", "M", "log10_M", "status", "error")


@dataclass
class Context:
    grid: SpectralGrid
    spec: StokesSpectrum
    renorm: RenormParams
    r_mode: str


@dataclass
class CommandResult:
    exit_code: int
    outputs: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    cert: CertificateReport | None = None
    audits: list = field(default_factory=list)
    record: object = None

    def say(self, msg: str) -> None:
        self.messages.append(msg)


def setup(cfg: RunConfig, grid_n: int | None = None) -> Context:
    grid = get_grid(grid_n or cfg["grid_n"], cfg["box_l"])
    spec = StokesSpectrum.from_grid(grid)
    omega = parse_mode(cfg["omega_mode"], "auto_lambda1")
    omega = spec.lambda1 if omega is None else omega
    r_manual = parse_mode(cfg["r_mode"], "auto_r_hat")
    r_mode = "auto_r_hat" if r_manual is None else "manual"
    r = r_hat(spec, omega) if r_manual is None else r_manual
    return Context(grid, spec, RenormParams.build(spec, r, omega), r_mode)


def estimate_constant(cfg: RunConfig, ctx: Context) -> ConstantEstimate:
    return estimate_c(
        CERTIFICATE_EXPONENTS,
        ctx.grid,
        cfg["estimator.samples"],
        cfg["estimator.seed"],
        cfg["estimator.hill_climb_steps"],
        workers=cfg["workers"],
    )


def gamma_amplitude(gamma: float, nu: float, c: float, ctx: Context) -> float:
    """Forcing amplitude that yields the given ``gamma`` at viscosity ``nu``."""
    c1 = smoothing_constant(0.25, ctx.renorm, ctx.spec).value
    with mpmath.workdps(60):
        M = mpmath.exp((mpmath.mpf(ctx.spec.lambda_max) - ctx.renorm.omega) * ctx.renorm.r)
        r4 = mpmath.mpf(ctx.renorm.r) ** mpmath.mpf(0.25)
        return float(gamma * mpmath.mpf(nu) ** 2 * ctx.spec.lambda1 * r4 / (4 * M**3 * c * c1))


def make_forcing(cfg: RunConfig, ctx: Context, c: float, nu: float | None = None) -> ForcingModel:
    nu = cfg["nu"] if nu is None else nu
    amp = cfg["forcing.amplitude"]
    if cfg["forcing.gamma_target"] is not None:
        amp = gamma_amplitude(cfg["forcing.gamma_target"], nu, c, ctx)
    return ForcingModel.from_seed(
        cfg["forcing.kind"], ctx.grid, cfg["forcing.profile_seed"], amp, ctx.renorm,
        cfg["forcing.theta"], cfg["forcing.d"], cfg["forcing.t0"],
    )


# -- file helpers -------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, res: CommandResult) -> Path:
    p = out / name
    p.write_text(text)
    res.outputs.append(p)
    return p


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return "NA" if x is None else str(x)


def _table(schema: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def audits_csv(audits: list[AuditResult]) -> str:
    rows = [
        {"name": a.name, "samples": a.samples, "violations": a.violations, "worst_ratio": a.worst_ratio,
         "worst_margin": a.worst_margin, "passed": a.passed, "note": a.note}
        for a in audits
    ]
    return _table(AUDIT_SCHEMA, AUDIT_COLUMNS, rows)


def write_manifest(command: str, cfg: RunConfig, out: Path, res: CommandResult, extra: dict | None = None) -> Path:
    seeds = {k: cfg[k] for k in ("estimator.seed", "audit.seed", "init.seed", "forcing.profile_seed")}
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "version": __version__,
        "config_hash": cfg.hash(SCHEMAS),
        "config": cfg.to_text(),
        "seeds": seeds,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "exit_code": res.exit_code,
        "options": extra or {},
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in res.outputs],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir if out_dir is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------


def build_from_config(cfg: RunConfig, ctx: Context | None = None, est: ConstantEstimate | None = None):
    ctx = ctx or setup(cfg)
    est = est or estimate_constant(cfg, ctx)
    f = make_forcing(cfg, ctx, est.value)
    cert = build_certificate(cfg["nu"], f, est, ctx.renorm, ctx.spec, ctx.r_mode, ctx.grid)
    return ctx, est, f, cert


def _reaudit_seed(seed: int, round_: int) -> int:
    # distinct from the audit seed, so re-audit samples never repeat
    return int(seed) + 1_000_003 * round_


def cmd_certify(cfg: RunConfig, out_dir=None) -> CommandResult:
    """Estimate constants, build the certificate and run every audit.

    Exit 0 iff the certificate is feasible and all audits pass; 2 when
    infeasible; 3 on any audit violation (offending seeds written to
    ``violations.txt``).
    """
    out = _out_dir(cfg, out_dir)
    res = CommandResult(EXIT_OK)
    ctx = setup(cfg)
    est = estimate_constant(cfg, ctx)
    n_aud, seed = cfg["audit.samples"], cfg["audit.seed"]

    # self-consistency: fold violators into c, then re-audit on fresh samples
    tri = audit_trilinear_bound(est, ctx.grid, n_aud, seed)
    rounds, folded = 0, 0
    while not tri.passed and rounds < SELF_CONSISTENCY_ROUNDS:
        folded += tri.violations
        est = self_consistent_c(est, ctx.grid, tri)
        rounds += 1
        res.say(f"trilinear bound violated on {tri.violations} samples; c re-estimated to {est.value!r}")
        tri = audit_trilinear_bound(est, ctx.grid, n_aud, _reaudit_seed(seed, rounds))
    if rounds:
        tri.note = f"c re-estimated {rounds} time(s) from {folded} violating samples; re-audited on fresh samples"
    audits = [tri]

    _, _, f, cert = build_from_config(cfg, ctx, est)
    res.cert = cert
    _write(out, "certificate.csv", cert.to_csv(), res)
    _write(out, "certificate.txt", cert.to_kv(), res)
    _write(out, "config.txt", cfg.to_text(), res)

    k = RenormedBoundConstants.build(est.value, ctx.renorm, ctx.spec)
    audits += audit_renormed_bounds(k, ctx.renorm, ctx.grid, n_aud, seed)
    audits.append(audit_skew_symmetry(ctx.grid, n_aud, seed))
    audits += audit_smoothing_and_equivalence(ctx.grid, ctx.renorm, ctx.spec, n_aud, seed)
    if cert.feasible:
        n_pairs = cfg["audit.pairs"]
        audits.append(audit_zero_dissipative(ctx.grid, cert, f, n_pairs, seed))
        audits.append(audit_strong_dissipative(ctx.grid, cert, f, n_pairs, seed))
        audits.append(audit_AJ_dissipative(ctx.grid, cert, f, n_pairs, seed))
        if f.kind == "holder_family":
            audits.append(audit_holder(ctx.grid, cert, f, seed))
    res.audits = audits
    _write(out, "audits.csv", audits_csv(audits), res)

    failed = [a for a in audits if not a.passed]
    if failed:
        lines = [f"{a.name} {s}" for a in failed for s in a.violating_seeds]
        _write(out, "violations.txt", "\n".join(lines) + "\n", res)
        res.say("audit violations: " + ", ".join(f"{a.name} ({a.violations})" for a in failed))
        res.exit_code = EXIT_AUDIT
    if not cert.feasible:
        res.say(f"infeasible: gamma = {cert.gamma!r} >= 1; nu_min = {cert.nu_min!r}")
        res.exit_code = EXIT_INFEASIBLE
    else:
        res.say(f"feasible: gamma = {cert.gamma!r}, u_minus = {cert.u_minus!r}, u_plus = {cert.u_plus!r}")
    write_manifest("certify", cfg, out, res)
    return res


def initial_state(cfg: RunConfig, ctx: Context, cert: CertificateReport | None):
    from .stokes import norm_H1

    if cert is not None and cert.feasible:
        radius = cfg["init.radius_fraction"] * cert.ball_radius
    else:
        radius = cfg["init.radius"]
    if cfg["init.kind"] == "eigenmode":
        u = eigenmode(ctx.grid, (1, 0, 0))
        return u * (radius / norm_H1(ctx.renorm, u))
    return random_field(ctx.grid, radius, "H1", [cfg["init.seed"], 2], cfg["init.decay"], ctx.renorm)


def cmd_simulate(cfg: RunConfig, cert_path=None, uncertified: bool = False, stokes_only: bool = False,
                 out_dir=None) -> CommandResult:
    out = _out_dir(cfg, out_dir)
    res = CommandResult(EXIT_OK)
    ctx = setup(cfg)
    if cert_path is not None:
        text = Path(cert_path).read_text()
        cert = CertificateReport.from_kv(text)
        if cert.grid_n != ctx.grid.n or not math.isclose(cert.r, ctx.renorm.r) or cert.nu != cfg["nu"]:
            res.exit_code = EXIT_USAGE
            res.say("certificate does not match the config (grid_n, r or nu differ)")
            return res
        c_val = cert.c
        res.outputs.append(_copy_input(Path(cert_path), out / "input_certificate.txt"))
    else:
        _, est, _, cert = build_from_config(cfg, ctx)
        c_val = est.value
    f = make_forcing(cfg, ctx, c_val)
    if not math.isclose(f.f_sup, cert.f_sup, rel_tol=1e-12, abs_tol=0.0) and not (f.f_sup == cert.f_sup):
        res.exit_code = EXIT_USAGE
        res.say(f"forcing amplitude {f.f_sup!r} does not match the certificate's f_sup {cert.f_sup!r}")
        return res
    if not cert.feasible and not uncertified:
        res.exit_code = EXIT_INFEASIBLE
        res.say(f"certificate infeasible (gamma = {cert.gamma!r}); pass --uncertified to run anyway")
        return res
    use_cert = None if uncertified else cert
    u0 = initial_state(cfg, ctx, use_cert)
    t_end = cfg["t_end"] or 50.0 / (cfg["nu"] * ctx.spec.lambda1)
    try:
        rec = simulate(
            u0, cfg["nu"], f, t_end, dt=cfg["dt"], cert=use_cert, renorm=ctx.renorm,
            nonlinear=cfg["simulate.nonlinear"] and not stokes_only, sample_every=cfg["sample_every"],
            checkpoint_every=cfg["checkpoint_every"], checkpoint_dir=out / "checkpoints",
        )
    except BallHypothesisError as exc:
        res.exit_code = EXIT_USAGE
        res.say(str(exc))
        return res
    res.record = rec
    res.cert = use_cert
    _write(out, "trajectory.csv", rec.to_csv(), res)
    _write(out, "config.txt", cfg.to_text(), res)
    thr = "NA" if rec.threshold is None else repr(rec.threshold)
    res.say(f"verdict={rec.verdict} sup_norm_H1={rec.sup_norm_H1!r} threshold={thr}")
    if rec.verdict == "VIOLATION":
        res.exit_code = EXIT_INVARIANCE
        p = write_snapshot(rec.violation_state, out / "violation_state.snap")
        res.outputs.append(p)
        _write(out, "violation.txt", "".join(f"{k} = {v!r}\n" for k, v in rec.violation.items()), res)
    write_manifest("simulate", cfg, out, res,
                   {"uncertified": uncertified, "stokes_only": stokes_only,
                    "certificate": "input_certificate.txt" if cert_path is not None else None})
    return res


def _copy_input(src: Path, dst: Path) -> Path:
    if src.resolve() != dst.resolve():
        shutil.copyfile(src, dst)
    return dst


def cmd_sweep(cfg: RunConfig, out_dir=None) -> CommandResult:
    """Feasibility phase diagram over ``nu`` or ``M(N)`` over grid sizes.

    Per-cell failures are recorded in the ``status``/``error`` columns and
    never abort the sweep.  An empty grid is a usage error.
    """
    out = _out_dir(cfg, out_dir)
    res = CommandResult(EXIT_OK)
    mode = cfg["sweep.mode"]
    if mode == "m_scaling":
        cells = [int(n) for n in cfg["sweep.grid_n"]]
        if not cells:
            res.exit_code = EXIT_USAGE
            res.say("empty sweep: sweep.grid_n lists no grid sizes")
            return res

        def cell(i_n):
            i, n = i_n
            row = {"cell": i, "grid_n": n}
            try:
                ctx = setup(cfg, grid_n=n)
                row.update(lambda1=ctx.spec.lambda1, lambda_max=ctx.spec.lambda_max, r=ctx.renorm.r,
                           omega=ctx.renorm.omega, M=ctx.renorm.M,
                           log10_M=(ctx.spec.lambda_max - ctx.renorm.omega) * ctx.renorm.r / math.log(10),
                           status="ok", error="")
            except Exception as exc:  # recorded per cell
                row.update(status="error", error=str(exc))
            return row

        columns = SWEEP_M_COLUMNS
    else:
        nus, rel = cfg["sweep.nu"], cfg["sweep.nu_relative"]
        if not nus and not rel:
            res.exit_code = EXIT_USAGE
            res.say("empty sweep: set sweep.nu or sweep.nu_relative")
            return res
        ctx = setup(cfg)
        est = estimate_constant(cfg, ctx)
        if rel:
            base = make_forcing(cfg, ctx, est.value)
            nu_min = build_certificate(cfg["nu"], base, est, ctx.renorm, ctx.spec, ctx.r_mode, ctx.grid).nu_min
            if nu_min == 0:
                res.exit_code = EXIT_USAGE
                res.say("sweep.nu_relative needs nonzero forcing (nu_min = 0)")
                return res
            cells = [x * nu_min for x in rel]
        else:
            cells = list(nus)
        forcing = make_forcing(cfg, ctx, est.value)

        def cell(i_nu):
            i, nu = i_nu
            row = {"cell": i, "grid_n": ctx.grid.n, "nu": float(nu)}
            try:
                c = build_certificate(nu, forcing, est, ctx.renorm, ctx.spec, ctx.r_mode, ctx.grid)
                row.update(feasible=c.feasible, gamma=c.gamma, delta=c.delta, u_minus=c.u_minus,
                           u_plus=c.u_plus, nu_min=c.nu_min, f_sup=c.f_sup, log10_M=c.log10_M,
                           status="ok", error="")
            except Exception as exc:  # recorded per cell
                row.update(status="error", error=str(exc))
            return row

        columns = SWEEP_NU_COLUMNS
    with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
        rows = list(pool.map(cell, enumerate(cells)))
    _write(out, "sweep.csv", _table(SWEEP_SCHEMA, columns, rows), res)
    _write(out, "config.txt", cfg.to_text(), res)
    bad = sum(r["status"] != "ok" for r in rows)
    res.say(f"sweep mode={mode} cells={len(rows)} failed={bad}")
    if mode == "m_scaling":
        ok = sorted((r for r in rows if r["status"] == "ok"), key=lambda r: r["grid_n"])
        if len(ok) > 1 and ok[-1]["log10_M"] > ok[0]["log10_M"]:
            res.say(f"warning: M(N) is not bounded uniformly in N here: log10 M grows from "
                    f"{ok[0]['log10_M']:.4g} (N={ok[0]['grid_n']}) to {ok[-1]['log10_M']:.4g} (N={ok[-1]['grid_n']})")
    write_manifest("sweep", cfg, out, res)
    return res


def cmd_ou_validate(cfg: RunConfig, out_dir=None, gamma: float = 0.5) -> CommandResult:
    out = _out_dir(cfg, out_dir)
    res = CommandResult(EXIT_OK)
    checks = ou_validation_suite(seed=cfg["audit.seed"], samples=cfg["audit.samples"], gamma=gamma)
    audits = []
    for ch in checks:
        a = AuditResult(ch.name, samples=1, worst_ratio=ch.value, worst_margin=ch.value - ch.bound)
        if not ch.passed:
            a.violations = 1
        a.note = f"measured {ch.value!r} allowed {ch.bound!r}"
        audits.append(a)
    res.audits = audits
    _write(out, "ou_audits.csv", audits_csv(audits), res)
    _write(out, "config.txt", cfg.to_text(), res)
    failed = [a.name for a in audits if not a.passed]
    if failed:
        res.exit_code = EXIT_AUDIT
        res.say("failed: " + ", ".join(failed))
    else:
        res.say(f"ou suite: {len(audits)} checks passed")
    write_manifest("ou-validate", cfg, out, res, {"gamma": gamma})
    return res


def cmd_replay(manifest_path, out_dir=None) -> CommandResult:
    """Re-run a manifest and compare every CSV byte for byte (exit 3 on mismatch)."""
    manifest_path = Path(manifest_path)
    m = json.loads(manifest_path.read_text())
    if m.get("schema") != MANIFEST_SCHEMA:
        return CommandResult(EXIT_USAGE, messages=[f"{manifest_path}: not a {MANIFEST_SCHEMA} manifest"])
    src = manifest_path.parent
    out = Path(out_dir) if out_dir is not None else src / "replay"
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig.from_text(m["config"])
    opts = m.get("options", {})
    cmd = m["command"]
    if cmd == "certify":
        run = cmd_certify(cfg, out)
    elif cmd == "simulate":
        cert = src / opts["certificate"] if opts.get("certificate") else None
        run = cmd_simulate(cfg, cert, opts.get("uncertified", False), opts.get("stokes_only", False), out)
    elif cmd == "sweep":
        run = cmd_sweep(cfg, out)
    elif cmd == "ou-validate":
        run = cmd_ou_validate(cfg, out, opts.get("gamma", 0.5))
    else:
        return CommandResult(EXIT_USAGE, messages=[f"unknown command {cmd!r} in manifest"])
    res = CommandResult(EXIT_OK, outputs=run.outputs)
    mismatched = []
    for entry in m["outputs"]:
        if not entry["path"].endswith(".csv"):
            continue
        new = out / entry["path"]
        same = new.exists() and _sha256(new) == entry["sha256"]
        res.say(f"{entry['path']}: {'identical' if same else 'DIFFERS'}")
        if not same:
            mismatched.append(entry["path"])
    if mismatched:
        res.exit_code = EXIT_AUDIT
    return res
