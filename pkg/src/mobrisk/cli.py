"""Command line interface.

Subcommands: ``synth``, ``profile``, ``rank`` and ``simulate``. Exit codes:
0 success, 1 usage or configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    DataError,
    ExperimentConfig,
    ExperimentError,
    load_traces,
    run_experiment,
)
from .risk import RegionState, RegistryMismatchError, profiles_from_rows, rank_users, scores_table
from .traces import (
    NoEventsError,
    TraceFormatError,
    build_profiles,
    parse_traces,
    read_region_registry,
    write_region_registry,
    write_traces,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
        overrides["synth_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if getattr(args, "policy", None):
        overrides["policies"] = tuple(args.policy)
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "strict", False):
        overrides["strict"] = True
    return dataclasses.replace(config, **overrides).validate()


def cmd_synth(args) -> int:
    config = _config(args)
    trace = load_traces(dataclasses.replace(config, trace_file=""))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "traces.csv", "w", newline="") as fh:
        write_traces(trace, fh)
    with open(out / "regions.csv", "w", newline="") as fh:
        write_region_registry(trace.regions, fh)
    print(f"wrote {trace.n_events} events for {trace.n_users} users to {out / 'traces.csv'}")
    return EXIT_OK


def cmd_profile(args) -> int:
    config = _config(args)
    regions = read_region_registry(args.regions) if args.regions else None
    trace = parse_traces(args.traces, regions=regions, strict=config.strict)
    days = args.learning_days if args.learning_days is not None else config.learning_days
    if trace.n_days < days:
        raise DataError(f"traces cover {trace.n_days} days, learning window needs {days}")
    profiles = build_profiles(trace, (trace.start, trace.day_start(days)))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["user_id", "region_id", "fraction"])
        for u, row in zip(profiles.user_ids, profiles.matrix):
            for r, f in zip(profiles.registry, row):
                if f > 0:
                    w.writerow([u, r, f"{f:.17g}"])
    finally:
        if out is not sys.stdout:
            out.close()
    if len(profiles.excluded):
        print(f"{len(profiles.excluded)} users without learning-window events", file=sys.stderr)
    return EXIT_OK


def _read_csv(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise DataError(f"{path}: expected header {','.join(header)}")
        return [row for row in reader if row]


def cmd_rank(args) -> int:
    try:
        rows = [(u, r, float(f)) for u, r, f in _read_csv(args.profiles, ["user_id", "region_id", "fraction"])]
        state_rows = [(r, float(i), float(s)) for r, i, s in _read_csv(args.state, ["region_id", "i", "s"])]
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed row: {exc}") from None
    registry = [r for r, _, _ in state_rows]
    profiles = profiles_from_rows(rows, registry)
    state = RegionState(
        [i for _, i, _ in state_rows], [s for _, _, s in state_rows], registry=tuple(registry)
    )
    text = scores_table(rank_users(profiles, state))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _config(args)
    result = run_experiment(config, workers=args.workers)
    for p, s in result.summary.policies.items():
        print(
            f"{p:>7}: cum_infected mean {s.mean_cum_infected:.1f} sd {s.std_cum_infected:.1f}, "
            f"quarantined mean {s.mean_quarantined:.1f}"
        )
    print(f"outputs in {result.output_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobrisk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help=out_help)
        p.add_argument("--strict", action="store_true", help="fatal on any rejected trace row")

    p = sub.add_parser("synth", help="write synthetic traces")
    common(p, "output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("profile", help="traces -> profiles CSV")
    common(p, "output CSV (default stdout)")
    p.add_argument("traces")
    p.add_argument("--regions", help="region registry file")
    p.add_argument("--learning-days", type=int)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("rank", help="profiles + region state -> ranking CSV")
    p.add_argument("profiles")
    p.add_argument("state")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("simulate", help="run a full experiment")
    common(p, "output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--policy", action="append", choices=["none", "random", "risk"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TraceFormatError, NoEventsError, RegistryMismatchError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ExperimentError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
