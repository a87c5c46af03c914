"""Command-line entry point.

    fedcontrib run --config grid.json --out rows.csv [--jsonl rows.jsonl] [--parallel N]
    fedcontrib summarize --in rows.csv --out summary.csv
    fedcontrib demo [--out rows.csv] [--summary summary.csv]

Exit status is 0 on success, 1 for an invalid config and 2 when a grid cell
fails at runtime.
"""

import argparse
import logging
import sys
from contextlib import contextmanager

from fedcontrib import experiments
from fedcontrib.experiments import ConfigError, ExperimentGrid, GridCellError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _emit(rows, args):
    with _open_out(args.out) as fh:
        experiments.write_rows_csv(rows, fh)
    if getattr(args, "jsonl", None):
        with open(args.jsonl, "w") as fh:
            experiments.write_rows_jsonl(rows, fh)
    if getattr(args, "summary", None):
        with _open_out(args.summary) as fh:
            experiments.write_summary_csv(experiments.summarize(rows), fh)


def _run_grid(grid, args):
    try:
        rows = experiments.run_grid(grid, parallel=args.parallel, timing=args.timing)
    except GridCellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(rows, args)
    return EXIT_OK


def cmd_run(args):
    try:
        grid = ExperimentGrid.from_json(args.config)
    except (ConfigError, OSError, TypeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _run_grid(grid, args)


def cmd_demo(args):
    return _run_grid(ExperimentGrid(), args)


def cmd_summarize(args):
    try:
        with open(args.input, newline="") as fh:
            rows = experiments.read_rows_csv(fh)
        summary = experiments.summarize(rows)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    with _open_out(args.out) as fh:
        experiments.write_summary_csv(summary, fh)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="fedcontrib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def grid_outputs(p):
        p.add_argument("--out", default="-", help="CSV of result rows (default: stdout)")
        p.add_argument("--jsonl", help="also write rows as JSON lines")
        p.add_argument("--summary", help="also write the summary table")
        p.add_argument("--parallel", type=int, default=1, help="worker processes")
        p.add_argument("--timing", action="store_true",
                       help="record wall_time_ms (output is then no longer reproducible)")

    run = sub.add_parser("run", help="run a grid from a JSON config")
    run.add_argument("--config", required=True)
    grid_outputs(run)
    run.set_defaults(func=cmd_run)

    demo = sub.add_parser("demo", help="run the default 4-user grid")
    grid_outputs(demo)
    demo.set_defaults(func=cmd_demo)

    summ = sub.add_parser("summarize", help="summarize a result CSV")
    summ.add_argument("--in", dest="input", required=True)
    summ.add_argument("--out", default="-")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "parallel", 1) < 1:
        print("--parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
