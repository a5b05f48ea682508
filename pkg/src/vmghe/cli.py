"""Command-line scenario runner.

    vmghe run mkhe_mul
    vmghe stats guess_slots --trials 700 --jobs 4
    vmghe bench --preset TEST-S
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import mghe
from .protocol import ProtocolError
from .scenario import (
    MIN_TRIALS,
    bundled_scenarios,
    dump_report,
    load_scenario,
    replay,
    run_bench,
    run_scenario,
    run_stats,
)

EXIT_OK, EXIT_PROTOCOL, EXIT_USAGE = 0, 1, 2


def _overrides(args) -> dict:
    return {"seed": args.seed, "mode": args.mode, "lam": args.lam}


def _emit(report: dict, out: str | None, summary: str) -> None:
    if out:
        Path(out).write_text(dump_report(report))
        print(summary)
    else:
        sys.stdout.write(dump_report(report))


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario).replace(**_overrides(args))
    try:
        res = run_scenario(scn)
    except (ProtocolError, mghe.ShareError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    if args.transcript:
        Path(args.transcript).write_text(res.transcript.dumps())
    rep = res.report
    summary = f"{rep['scenario']}: {rep['verdict']}"
    summary += f" value={rep['result']}" if rep["verdict"] == "accept" else f" ({rep['reason']})"
    _emit(rep, args.out, summary)
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.trials < MIN_TRIALS:
        print(f"--trials must be at least {MIN_TRIALS}", file=sys.stderr)
        return EXIT_USAGE
    scn = load_scenario(args.scenario).replace(**_overrides(args))
    rep = run_stats(scn, args.trials, args.jobs)
    lo, hi = rep["detection_wilson99"]
    summary = (f"{rep['scenario']} [{rep['tamper']}]: detected {rep['rejections']}/{rep['trials']}"
               f" = {rep['detection_rate']:.4f}, 99% Wilson [{lo:.4f}, {hi:.4f}]")
    if rep["expected_detection"] is not None:
        summary += f", bound {rep['expected_detection']:.4f}"
    _emit(rep, args.out, summary)
    return EXIT_PROTOCOL if rep["errors"] else EXIT_OK


def cmd_bench(args) -> int:
    rep = run_bench(args.preset, args.mode or "crs", args.seed or 0, args.repeats)
    if args.out:
        Path(args.out).write_text(dump_report(rep))
    if args.json:
        sys.stdout.write(dump_report(rep))
    else:
        print(f"{'op':<10}{'ms':>12}")
        for row in rep["rows"]:
            print(f"{row['op']:<10}{row['ms']:>12.3f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        replay(Path(args.transcript).read_text())
    except ProtocolError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    print("replay identical")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        scn = load_scenario(name)
        print(f"{name:<16}{scn.config.preset:<8}{scn.config.mode:<10}{scn.tamper:<16}{scn.program}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the scenario)")
    common.add_argument("--mode", choices=mghe.MODES, default=None, help="key generation mode")
    common.add_argument("--lambda", dest="lam", type=int, default=None, help="replication parameter")
    common.add_argument("--out", default=None, help="write the JSON report here")

    parser = argparse.ArgumentParser(prog="vmghe", description="Verifiable multigroup HE scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario end to end")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--transcript", default=None, help="write the transcript here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", parents=[common], help="detection statistics over seeded trials")
    p.add_argument("scenario")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", parents=[common], help="time the pipeline stages")
    p.add_argument("--preset", default="TEST-S")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", action="store_true", help="print the JSON report instead of a table")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run a transcript and compare bytes")
    p.add_argument("transcript")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
