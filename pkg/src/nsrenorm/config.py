"""Flat ``key = value`` run configuration with dotted namespaces.

Precedence, lowest first: built-in defaults, config file, environment
variables ``NSRENORM_<KEY>`` (dots become ``__``, upper case), command-line
overrides.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_SCHEMA = "config/1"
ENV_PREFIX = "NSRENORM_"

# key -> (type, default, help)
KEYS: dict[str, tuple[str, str, str]] = {
    "grid_n": ("int", "16", "grid points per axis (even, >= 4)"),
    "box_l": ("float", repr(2 * math.pi), "periodic box length"),
    "nu": ("float", "1.0", "kinematic viscosity"),
    "r_mode": ("str", "auto_r_hat", "auto_r_hat or manual:<r>"),
    "omega_mode": ("str", "auto_lambda1", "auto_lambda1 or manual:<omega>"),
    "forcing.kind": ("str", "zero", "zero, steady or holder_family"),
    "forcing.profile_seed": ("int", "7", "seed of the forcing profile"),
    "forcing.amplitude": ("float", "0.0", "sup_t ||P f(t)||_H1"),
    "forcing.gamma_target": ("optfloat", "none", "if set, choose the amplitude giving this gamma at nu"),
    "forcing.d": ("optfloat", "none", "Hölder constant (default: amplitude)"),
    "forcing.theta": ("float", "0.5", "Hölder exponent"),
    "forcing.t0": ("float", "1.0", "kink time of the Hölder modulation"),
    "estimator.samples": ("int", "48", "random triples for the trilinear constant"),
    "estimator.hill_climb_steps": ("int", "4", "block-ascent sweeps per triple"),
    "estimator.seed": ("int", "0", "estimation seed"),
    "audit.samples": ("int", "1000", "samples per bound audit"),
    "audit.pairs": ("int", "100", "pairs per dissipativity audit"),
    "audit.seed": ("int", "1", "audit seed"),
    "dt": ("optfloat", "auto", "time step (auto: advective/viscous default)"),
    "t_end": ("optfloat", "auto", "horizon (auto: 50/(nu lambda1))"),
    "sample_every": ("int", "10", "record every n-th step"),
    "checkpoint_every": ("int", "0", "snapshot every n-th step (0: off)"),
    "simulate.nonlinear": ("bool", "true", "include B(u,u)"),
    "init.kind": ("str", "random", "random or eigenmode"),
    "init.seed": ("int", "3", "seed of the initial field"),
    "init.radius_fraction": ("float", "1.0", "||u0||_H1 as a fraction of u_plus/2 (certified runs)"),
    "init.radius": ("float", "1.0", "||u0||_H1 for uncertified runs"),
    "init.decay": ("float", "1.0", "spectral decay of the random initial field"),
    "output_dir": ("str", "out", "output directory"),
    "workers": ("int", "1", "worker threads"),
    "sweep.mode": ("str", "nu", "nu or m_scaling"),
    "sweep.nu": ("list", "", "comma-separated viscosities"),
    "sweep.nu_relative": ("list", "", "comma-separated multiples of nu_min"),
    "sweep.grid_n": ("list", "8,16,32", "comma-separated grid sizes (m_scaling)"),
}

_NONE = {"none", "auto", ""}


class ConfigError(ValueError):
    pass


def _parse(key: str, raw: str):
    typ = KEYS[key][0]
    s = str(raw).strip()
    try:
        if typ == "int":
            return int(s)
        if typ == "float":
            return float(s)
        if typ == "optfloat":
            return None if s.lower() in _NONE else float(s)
        if typ == "bool":
            if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(s)
            return s.lower() in ("true", "1", "yes")
        if typ == "list":
            return tuple(float(x) for x in s.split(",") if x.strip())
        return s
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc


def _format(key: str, value) -> str:
    typ = KEYS[key][0]
    if value is None:
        return "auto" if key in ("dt", "t_end") else "none"
    if typ == "bool":
        return "true" if value else "false"
    if typ == "float" or typ == "optfloat":
        return repr(float(value))
    if typ == "list":
        return ",".join(_format_num(v) for v in value)
    return str(value)


def _format_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_mode(s: str, auto: str) -> float | None:
    """``auto`` -> None, ``manual:<x>`` -> x."""
    if s == auto:
        return None
    head, _, val = s.partition(":")
    if head != "manual" or not val:
        raise ConfigError(f"expected {auto!r} or 'manual:<value>', got {s!r}")
    return float(val)


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: _parse(k, v[1]) for k, v in KEYS.items()}
        for k, v in self.values.items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = _parse(k, v) if isinstance(v, str) else v
        object.__setattr__(self, "values", merged)
        self.validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **kv) -> "RunConfig":
        new = dict(self.values)
        for k, v in kv.items():
            new[k.replace("__", ".")] = v
        return RunConfig(new)

    def updated(self, mapping: dict) -> "RunConfig":
        new = dict(self.values)
        new.update(mapping)
        return RunConfig(new)

    def validate(self) -> None:
        v = self.values
        if v["grid_n"] < 4 or v["grid_n"] % 2:
            raise ConfigError(f"grid_n must be even and >= 4, got {v['grid_n']}")
        for k in ("box_l", "nu", "forcing.theta"):
            if not v[k] > 0:
                raise ConfigError(f"{k} must be positive, got {v[k]}")
        for k in ("dt", "t_end", "forcing.gamma_target", "forcing.d"):
            if v[k] is not None and not v[k] > 0 and not (k == "forcing.d" and v[k] == 0):
                raise ConfigError(f"{k} must be positive, got {v[k]}")
        if v["forcing.amplitude"] < 0:
            raise ConfigError("forcing.amplitude must be >= 0")
        if v["forcing.kind"] not in ("zero", "steady", "holder_family"):
            raise ConfigError(f"unknown forcing.kind {v['forcing.kind']!r}")
        if v["init.kind"] not in ("random", "eigenmode"):
            raise ConfigError(f"unknown init.kind {v['init.kind']!r}")
        if v["sweep.mode"] not in ("nu", "m_scaling"):
            raise ConfigError(f"unknown sweep.mode {v['sweep.mode']!r}")
        for k in ("sample_every", "workers"):
            if v[k] < 1:
                raise ConfigError(f"{k} must be >= 1")
        parse_mode(v["r_mode"], "auto_r_hat")
        parse_mode(v["omega_mode"], "auto_lambda1")

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# schema={CONFIG_SCHEMA}"]
        lines += [f"{k} = {_format(k, self.values[k])}" for k in KEYS]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(parse_kv(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def hash(self, schemas: tuple[str, ...] = ()) -> str:
        h = hashlib.sha256(self.to_text().encode())
        for s in schemas:
            h.update(s.encode())
        return h.hexdigest()


def parse_kv(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in KEYS:
        name = ENV_PREFIX + key.replace(".", "__").upper()
        if name in environ:
            out[key] = environ[name]
    return out


def flag_name(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def resolve(path: str | Path | None = None, overrides: dict | None = None, environ=None) -> RunConfig:
    values = parse_kv(Path(path).read_text()) if path else {}
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(values)
