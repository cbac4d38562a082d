"""Command-line surface: ``nsrenorm certify|simulate|sweep|ou-validate|replay``.

Exit codes: 0 success, 1 usage, 2 infeasible certificate, 3 audit
violation (or replay mismatch), 4 invariance violation.
"""

from __future__ import annotations

import argparse
import sys

from .config import ENV_PREFIX, KEYS, ConfigError, flag_name, resolve
from .harness import (
    EXIT_USAGE,
    cmd_certify,
    cmd_ou_validate,
    cmd_replay,
    cmd_simulate,
    cmd_sweep,
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    g = p.add_argument_group("config overrides", f"each flag overrides its config key; env vars {ENV_PREFIX}<KEY>")
    for key, (_, default, help_) in KEYS.items():
        g.add_argument(flag_name(key), dest="cfg:" + key, metavar="V", help=f"{help_} [{key}, default {default or 'empty'}]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsrenorm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="estimate constants, build and audit the certificate")
    _add_config_flags(p)

    p = sub.add_parser("simulate", help="integrate and monitor ball invariance")
    _add_config_flags(p)
    p.add_argument("--certificate", metavar="PATH", help="certificate.txt from a certify run")
    p.add_argument("--uncertified", action="store_true", help="run without a certified claim")
    p.add_argument("--stokes-only", action="store_true", help="disable B(u, u)")

    p = sub.add_parser("sweep", help="phase diagram over nu or M(N) over grid sizes")
    _add_config_flags(p)

    p = sub.add_parser("ou-validate", help="Ornstein-Uhlenbeck validation suite")
    _add_config_flags(p)
    p.add_argument("--gamma", type=float, default=0.5, help="renorming time in (0, 1)")

    p = sub.add_parser("replay", help="re-run a manifest and compare CSVs byte for byte")
    p.add_argument("manifest")
    p.add_argument("--output-dir", help="where to write the replayed outputs")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        if args.command == "replay":
            res = cmd_replay(args.manifest, args.output_dir)
        else:
            overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
            cfg = resolve(args.config, overrides)
            if args.command == "certify":
                res = cmd_certify(cfg)
            elif args.command == "simulate":
                res = cmd_simulate(cfg, args.certificate, args.uncertified, args.stokes_only)
            elif args.command == "sweep":
                res = cmd_sweep(cfg)
            else:
                res = cmd_ou_validate(cfg, gamma=args.gamma)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"nsrenorm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for msg in res.messages:
        print(msg)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
