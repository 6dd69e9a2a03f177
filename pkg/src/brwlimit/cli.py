"""Command-line entry point.

Subcommands mirror the experiment kinds: ``simulate``, ``moments``,
``survival``, ``fdd``, ``identity``, ``csbm`` plus ``report`` for rendering
plot-ready CSVs from an existing results file.  Exit codes: 0 all declared
tolerances pass, 1 any fail, 2 config error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .harness import (CSV_HEADER, ConfigError, ReportRow, convergence_table,
                      load_config, run_experiment, write_plot_files)

_SUBCOMMAND_KIND = {
    "simulate": "simulate",
    "moments": "moments",
    "survival": "survival",
    "fdd": "fdd",
    "identity": "identity",
    "csbm": "csbm-table",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brwlimit",
        description="Critical branching random walk scaling-limit verification harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMAND_KIND:
        p = sub.add_parser(name, help=f"run a {name} experiment from a config file")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--out", default=None, help="output directory")
    p = sub.add_parser("report", help="render plot CSVs and a summary from results.csv")
    p.add_argument("--out", required=True, help="directory containing results.csv")
    return parser


def _parse_csv_rows(path: str) -> list:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path} does not carry the expected CSV header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 9:
            raise ConfigError(f"malformed CSV row: {line!r}")
        n, quantity, ere, eim, se, tre, tim, _dev, ok = parts
        rows.append(ReportRow(int(n), quantity, complex(float(ere), float(eim)),
                              float(se), complex(float(tre), float(tim)), ok == "true"))
    return rows


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            rows = _parse_csv_rows(os.path.join(args.out, "results.csv"))
            written = write_plot_files(rows, args.out)
            for path in written:
                print(f"wrote {path}")
            failed = [r for r in rows if not r.passed]
            print(f"{len(rows)} rows, {len(rows) - len(failed)} pass, {len(failed)} fail")
            return 0 if not failed else 1

        config = load_config(args.config, _SUBCOMMAND_KIND[args.command])
        if args.seed is not None:
            config.master_seed = args.seed
        multi_n = len(config.n_grid) > 1
        if multi_n and config.kind not in ("csbm-table", "simulate"):
            report, annotations = convergence_table(config, out_dir=args.out,
                                                    threads=args.threads)
        else:
            report = run_experiment(config, out_dir=args.out, threads=args.threads)
            annotations = {}
        for line in report.summary_lines:
            print(line)
        for quantity, nonincreasing in sorted(annotations.items()):
            trend = "nonincreasing" if nonincreasing else "non-monotone"
            print(f"TREND {quantity}: |estimate - target| {trend} in n")
        return report.exit_code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
