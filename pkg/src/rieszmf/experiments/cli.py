"""Command line entry point: ``rieszmf <subcommand> [--config F] [--out D] [--threads K] [--force]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..fields import CFLError, NumericalError
from ..kernels import KernelConstructionError
from .config import ConfigError, RegimeSpec
from .regime import GateError, validate_regime
from .runner import KINDS, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def build_parser():
    p = argparse.ArgumentParser(prog="rieszmf", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("--config", help="flat key = value config file (defaults if omitted)")
        s.add_argument("--out", default="runs", help="output root; run dirs are content-addressed")
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--force", action="store_true", help="run outside the theorem gates (labelled)")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def load_spec(args) -> RegimeSpec:
    text = open(args.config, encoding="utf-8").read() if args.config else ""
    if args.set:
        base = RegimeSpec.parse(text)
        over = RegimeSpec.parse("\n".join(args.set))
        keys = {kv.split("=", 1)[0].strip() for kv in args.set}
        return base.replace(**{k: getattr(over, k) for k in keys})
    return RegimeSpec.parse(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_spec(args)
        if args.cmd == "validate-regime":
            rep = validate_regime(spec)
            print("\n".join(rep.lines()))
            gates = ("dimension", "sub_coulomb", "thm_prob", "alpha", "theta", "thm_L2")
            if not rep.passed(gates) and not args.force:
                return EXIT_CONFIG
        run_dir, _ = run_experiment(args.cmd, spec, args.out, force=args.force,
                                    config_path=args.config, threads=args.threads)
        if args.cmd != "validate-regime":
            print((run_dir / "summary.txt").read_text(), end="")
        print(f"artifacts: {run_dir}")
        return EXIT_OK
    except (NumericalError, CFLError, KernelConstructionError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GateError, ConfigError, ValueError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
