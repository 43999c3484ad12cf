"""Command line entry points: search, random-search, profile, report.

Exit codes: 0 ok, 2 configuration/input error, 3 worker failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .arch import ArchGraph, ParseError, canonical_parse, stack_module, validate
from .evaluators import WorkerError
from .resources import report
from .search import (ChecksumMismatch, ConfigError, SearchConfig,
                     best_so_far_rows, run_random_search, run_search)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="archsearch")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="policy-gradient architecture search")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", default=None, help="checkpoint file to resume from")

    r = sub.add_parser("random-search", help="uniform-random control arm")
    r.add_argument("--config", required=True)

    pr = sub.add_parser("profile", help="resource report for an architecture file")
    pr.add_argument("--arch", required=True)
    pr.add_argument("--repeats", type=int, default=6,
                    help="stack count when profiling a module architecture")

    rp = sub.add_parser("report", help="best-so-far curve and feasibility counts as CSV")
    rp.add_argument("--log", required=True)
    rp.add_argument("--out", default=None, help="CSV output path (default stdout)")
    return p


def _cmd_search(args, random: bool) -> int:
    config = SearchConfig.from_file(args.config)
    if random:
        out = run_random_search(config)
    else:
        out = run_search(config, resume_from=getattr(args, "resume", None))
    summary = {
        "episodes": out.episodes,
        "models_searched": out.models_searched,
        "feasible_count": out.feasible_count,
        "best_reward": out.best_reward,
        "best_feasible_reward": out.best_feasible_reward,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_profile(args) -> int:
    with open(args.arch) as f:
        arch = canonical_parse(f.read())
    if not isinstance(arch, ArchGraph):
        arch = stack_module(arch.module, args.repeats, arch.input_shape,
                            arch.output_classes)
    bad = validate(arch)
    if bad:
        for v in bad:
            print(f"invalid: {v.code} at {v.where}: {v.detail}", file=sys.stderr)
        return 2
    print(json.dumps(report(arch).to_dict(), sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    records = []
    with open(args.log) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    rows = best_so_far_rows(records)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        fields = ["models_searched", "episode", "step", "rollout", "reward",
                  "best_reward", "performance", "feasible", "feasible_count",
                  "best_feasible_reward"]
        w = csv.DictWriter(out, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "search":
            return _cmd_search(args, random=False)
        if args.command == "random-search":
            return _cmd_search(args, random=True)
        if args.command == "profile":
            return _cmd_profile(args)
        if args.command == "report":
            return _cmd_report(args)
    except (ConfigError, ParseError, ChecksumMismatch, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except WorkerError as e:
        print(f"worker error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
