"""``qdla <experiment> --config PATH [--seed N] [--averages N] [--out DIR]``.

Exit codes: 0 success, 2 bad config or unresolvable grid, 3 no lock-in found,
4 numerical failure (integration, fit or aliasing).
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import AliasingError, ConfigError, EstimationError, IntegrationError, NoLockError, ResolutionError, SingularConfigurationError
from .harness import EXPERIMENTS, load_config, run, write_bundle

log = logging.getLogger("qdla")

EXIT_OK, EXIT_CONFIG, EXIT_NO_LOCK, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdla", description="Run a quantum double lock-in experiment from a config file.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON or TOML experiment config")
    ap.add_argument("--seed", type=int, default=None, help="master RNG seed (overrides the config)")
    ap.add_argument("--averages", type=int, default=None, help="repetitions averaged per point (overrides the config)")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed, averages=args.averages)
        bundle = run(cfg)
    except (ConfigError, ResolutionError, SingularConfigurationError) as exc:
        print(f"qdla: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoLockError as exc:
        partial = getattr(exc, "bundle", None)
        if partial is not None:
            write_bundle(partial, args.out)
        print(f"qdla: no lock-in: {exc}", file=sys.stderr)
        return EXIT_NO_LOCK
    except (IntegrationError, EstimationError, AliasingError, FloatingPointError) as exc:
        print(f"qdla: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = write_bundle(bundle, args.out)
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
