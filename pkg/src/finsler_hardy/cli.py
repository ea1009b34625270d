"""Command-line front end.

    finsler-hardy constants --config run.toml
    finsler-hardy verify --scenario euclid-bipolar-n3 --which all --out results/
    finsler-hardy scenarios

Exit codes: 0 when every gating report passes, 1 on any failure, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import WHICH, ConfigError, RunConfig, bundled_scenarios
from .runner import cmd_constants, cmd_verify

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsler-hardy", description="Numerical checks of Finsler Hardy inequalities.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", metavar="PATH", help="TOML run configuration")
        src.add_argument("--scenario", metavar="NAME", help="bundled scenario name")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--grid", type=int, metavar="N", help="fine-grid nodes per axis")
        sp.add_argument("--threads", type=int, metavar="N")

    common(sub.add_parser("constants", help="estimate r_F and l_F"))
    v = sub.add_parser("verify", help="run the verification pipeline")
    common(v)
    v.add_argument("--which", choices=WHICH)
    sub.add_parser("scenarios", help="list bundled scenarios")
    return p


def load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_toml(args.config)
    elif args.scenario:
        cfg = RunConfig.from_scenario(args.scenario)
    else:
        cfg = RunConfig()
    return cfg.with_overrides(seed=args.seed, grid=args.grid, threads=args.threads, out=args.out,
                              which=getattr(args, "which", None))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        for name in bundled_scenarios():
            print(name)
        return EXIT_PASS
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "constants":
        const, path = cmd_constants(cfg)
        est = const.theorem
        r = "unbounded" if est.r_unbounded else f"{est.r_F:.6g}"
        print(f"r_F = {r}  l_F = {est.l_F:.6g}  -> {path}")
        return EXIT_PASS

    m = cmd_verify(cfg)
    for rec in m.reports:
        flag = {"checked": "PASS" if rec["passed"] else "FAIL"}.get(rec["status"], rec["status"].upper())
        print(f"{flag:15s} {rec['inequality_id']:26s} {rec['path']}")
    print(f"verdict: {m.verdict}  ({m.counts['failed']} of {m.counts['gating']} gating reports failed)")
    return EXIT_PASS if m.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
