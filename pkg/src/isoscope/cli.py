"""``isoscope`` command line: run, compare, bench-ipc.

Exit status: 0 success, 2 validation or parse error, 3 scenario error at run
time, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import MissingRun, ParseError, ValidationError
from .report import (
    EXIT_IO,
    EXIT_OK,
    EXIT_SCENARIO,
    EXIT_VALIDATION,
    HARDWARE_REFERENCE,
    main_compare,
    run,
    write_bench,
)
from .scenario import load_scenario, parse_pin
from .shmem import round_trip_bench

DEFAULT_OUT = "isoscope-out"


def _default_out() -> str:
    return os.environ.get("ISOSCOPE_OUT") or DEFAULT_OUT


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isoscope", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario file and write its report bundle")
    r.add_argument("file")
    r.add_argument("--out", help="output directory (default: $ISOSCOPE_OUT, scenario "
                                 "output_dir, or ./isoscope-out/<name>)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--duration-ns", type=int, help="override the scenario duration")

    c = sub.add_parser("compare", help="tabulate two finished runs side by side")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", help="where compare.csv / compare.png go (default: dir-a)")

    b = sub.add_parser("bench-ipc", help="shared-memory post/poll round-trip benchmark")
    b.add_argument("--mode", choices=("sim", "live"), default="sim")
    b.add_argument("--loops", type=int, default=10)
    b.add_argument("--roundtrips", type=int, default=1000)
    b.add_argument("--pin", help="host cores A,B for the two endpoints (live mode)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="output directory (default: $ISOSCOPE_OUT or ./isoscope-out)")
    return ap


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.file)
        sc = sc.with_overrides(seed=args.seed, duration_ns=args.duration_ns)
    except (ParseError, ValidationError) as exc:
        print(f"isoscope: invalid scenario {args.file}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"isoscope: cannot read {args.file}: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.out:
        out_dir = Path(args.out)
    elif os.environ.get("ISOSCOPE_OUT"):
        out_dir = Path(os.environ["ISOSCOPE_OUT"]) / sc.name
    elif sc.output_dir:
        out_dir = Path(sc.output_dir)
    else:
        out_dir = Path(DEFAULT_OUT) / sc.name
    outcome = run(sc, out_dir)
    st = outcome.stats
    if st is not None and outcome.status in (EXIT_OK, EXIT_SCENARIO):
        print(f"{sc.name} ({sc.mode}): count={st.count} min={st.min_ns} ns "
              f"max={st.max_ns} ns jitter={st.jitter_ns} ns")
    if outcome.error:
        print(f"isoscope: {sc.name}: {outcome.error}", file=sys.stderr)
    print(f"report: {out_dir}")
    return outcome.status


def _cmd_compare(args) -> int:
    try:
        print(main_compare(args.dir_a, args.dir_b, args.out or args.dir_a))
    except MissingRun as exc:
        print(f"isoscope: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValidationError) as exc:
        print(f"isoscope: bad scenario echo: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"isoscope: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.loops < 1 or args.roundtrips < 1:
        print("isoscope: --loops and --roundtrips must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        pin = parse_pin(args.pin, "--pin") if args.pin else None
    except ValidationError as exc:
        print(f"isoscope: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    res = round_trip_bench(args.mode, args.loops, args.roundtrips, pin, seed=args.seed)
    st = res.stats
    comment = f"bench mode={res.mode} seed={args.seed} pinned={res.pinned}"
    try:
        files = write_bench(res, args.out or _default_out(), comment)
    except OSError as exc:
        print(f"isoscope: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"bench-ipc {res.mode}: count={st.count} min={st.min_ns} ns max={st.max_ns} ns "
          f"mean={st.mean_ns:.1f} ns jitter={st.jitter_ns} ns")
    if res.mode == "live":
        print(f"wall={res.wall_ns} ns lost={res.lost} duplicated={res.duplicated} "
              f"corrupt={res.corrupt} pinned={res.pinned} fallback={res.pinning_fallback}")
        for n in res.notes:
            print(f"note: {n}")
    ref = HARDWARE_REFERENCE[("ipc_bench", "baseline")]
    print(f"hardware reference (annotation only): {ref[1]}-{ref[2]} ns round trip")
    print(f"wrote {files['bench']} and {files['bench_hist']}")
    return EXIT_SCENARIO if (res.lost or res.duplicated or res.corrupt) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "bench-ipc": _cmd_bench}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
