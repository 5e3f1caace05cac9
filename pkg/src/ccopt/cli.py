"""Command-line entry point.

    ccopt run <config.json> [--out DIR] [--workers K]
    ccopt summarize <DIR>
    ccopt validate-neighborhoods <config.json>

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .netgen import LayoutError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccopt", description="Antenna-parameter optimisation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every (algorithm, seed) pair of a config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    r.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("summarize", help="rebuild summary tables of a run directory")
    s.add_argument("directory")
    v = sub.add_parser("validate-neighborhoods", help="report interferer capture rates")
    v.add_argument("config")
    return p


def _print_table(rows: list[dict], out=None) -> None:
    out = out or sys.stdout
    if not rows:
        return
    cols = list(rows[0])
    print(",".join(cols), file=out)
    for r in rows:
        print(",".join(experiment.fmt(r[c]) for c in cols), file=out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            if args.workers < 1:
                raise experiment.ConfigError("--workers must be >= 1")
            cfg = experiment.load_config(args.config)
            out = experiment.run_experiment(cfg, args.out, args.workers)
            _print_table(experiment.read_csv(out / "summary.csv"))
        elif args.command == "summarize":
            _print_table(experiment.summarize(args.directory))
        else:
            cfg = experiment.load_config(args.config)
            _print_table(experiment.neighborhood_report(cfg))
    except (experiment.ConfigError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure of a run is a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
