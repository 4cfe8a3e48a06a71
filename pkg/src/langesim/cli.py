"""Command line entry point.

    langesim <experiment> --config FILE [--seed U64] [--threads N]
                          [--out PATH] [--profile desk|paper] [-v]
    langesim verify [--oracle NAME] [--seed U64] [--out PATH] [-v]

Seed precedence: --seed, then the LANGESIM_SEED environment variable, then
master_seed in the config. Exit codes: 0 ok, 1 oracle failure, 2 bad
config/usage, 3 trajectory blow-up.
"""

import argparse
import logging
import os
import sys

from . import __version__
from .experiments import EXPERIMENTS, ConfigError, load_config, run_experiment
from .integrator import BlowUpError


def _parse_seed(text, source):
    try:
        seed = int(text, 0) if isinstance(text, str) else int(text)
    except ValueError:
        raise ConfigError(f"master_seed: {source} is not an integer: {text!r}")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"master_seed: {source} out of u64 range")
    return seed


def build_parser():
    p = argparse.ArgumentParser(prog="langesim",
                                description="Batch driver for periodically forced "
                                            "Langevin simulations.")
    p.add_argument("--version", action="version", version=f"langesim {__version__}")
    sub = p.add_subparsers(dest="command", metavar="<experiment>|verify")

    def common(sp):
        sp.add_argument("--seed", default=None, help="master seed (u64)")
        sp.add_argument("--out", default=None, help="output CSV path")
        sp.add_argument("-v", "--verbose", action="store_true")

    for tag in EXPERIMENTS:
        sp = sub.add_parser(tag, help=f"run the {tag} experiment")
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (default 1; output independent of it)")
        sp.add_argument("--profile", default="desk", choices=["desk", "paper"],
                        help="config profile to apply (default desk)")
        common(sp)

    sp = sub.add_parser("verify", help="run the oracle self-checks")
    sp.add_argument("--oracle", default=None, help="run a single oracle by name")
    common(sp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr,
    )
    try:
        seed = None
        if args.seed is not None:
            seed = _parse_seed(args.seed, "--seed")
        elif os.environ.get("LANGESIM_SEED"):
            seed = _parse_seed(os.environ["LANGESIM_SEED"], "LANGESIM_SEED")

        if args.command == "verify":
            from .verify import run_suite

            reports = run_suite(oracle=args.oracle, master_seed=seed, out=args.out)
            failed = [r for r in reports if not r.passed]
            for r in reports:
                status = "pass" if r.passed else "FAIL"
                print(f"{status}  {r.name}: {r.detail}")
            return 1 if failed else 0

        cfg = load_config(args.config, profile=args.profile, seed_override=seed,
                          threads=args.threads, out=args.out)
        if cfg.experiment != args.command:
            raise ConfigError(
                f"experiment: config declares {cfg.experiment!r}, "
                f"command line asked for {args.command!r}"
            )
        if not cfg.out:
            cfg.out = f"{cfg.experiment}.csv"
        run_experiment(cfg)
        print(cfg.out)
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BlowUpError as e:
        print(f"error: trajectory blew up at step {e.step_index}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
