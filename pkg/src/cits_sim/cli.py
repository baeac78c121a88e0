"""``cits-sim`` command line.

Exit codes:

* ``validate``: 0 valid, 1 violations found, 2 unreadable or malformed input
* ``run``: 0 no alarms, 2 alarms raised, 1 operational error
* ``attack-paths``: 0 (even with no paths), 1 operational error
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from .attack import enumerate_attack_paths, load_scenario, load_vuln_catalog, parse_goal, run_scenario
from .engine import SimConfig
from .errors import CitsError, ParseError, ValidationError
from .monitor import report_json, report_text
from .topology import load_topology, validate_topology

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALARMS = 2
EXIT_UNREADABLE = 2


def cmd_validate(args) -> int:
    try:
        t = load_topology(args.topology, validate=False)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREADABLE
    violations = validate_topology(t)
    for line in violations:
        print(line)
    if violations:
        return EXIT_ERROR
    print(f"{args.topology}: ok", file=sys.stderr)
    return EXIT_OK


def _single_run(topology_path, scenario_path, seed, horizon_ms, tick_ms):
    topology = load_topology(topology_path)
    scenario = load_scenario(scenario_path) if scenario_path else None
    config = SimConfig(seed=seed, horizon_ms=horizon_ms, tick_ms=tick_ms)
    result = run_scenario(scenario, topology, config)
    return result.trace_jsonl(), result.report()


def _suffixed(path: Optional[str], seed: int, many: bool) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    return p.with_name(f"{p.stem}.seed{seed}{p.suffix}") if many else p


def cmd_run(args) -> int:
    seeds: List[int] = args.seed or [0]
    started = time.perf_counter()
    try:
        if args.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_single_run, args.topology, args.scenario, s, args.horizon_ms, args.tick_ms)
                           for s in seeds]
                outputs = [f.result() for f in futures]
        else:
            outputs = [_single_run(args.topology, args.scenario, s, args.horizon_ms, args.tick_ms) for s in seeds]
    except ValidationError as exc:
        for line in exc.violations:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, CitsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    many = len(seeds) > 1
    alarms = 0
    for seed, (trace, report) in zip(seeds, outputs):
        trace_path = _suffixed(args.trace, seed, many)
        report_path = _suffixed(args.report, seed, many)
        if trace_path is not None:
            trace_path.write_text(trace)
        if report_path is not None:
            report_path.write_text(report_json(report))
        if not args.quiet:
            sys.stdout.write(report_text(report))
        alarms += report["counts"]["alarms"]
    if args.timing:
        print(f"wall time: {time.perf_counter() - started:.3f} s", file=sys.stderr)
    return EXIT_ALARMS if alarms else EXIT_OK


def cmd_attack_paths(args) -> int:
    try:
        topology = load_topology(args.topology)
        catalog = load_vuln_catalog(args.catalog)
        goal = parse_goal(args.goal)
    except ValidationError as exc:
        for line in exc.violations:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, CitsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for path in enumerate_attack_paths(topology, catalog, args.attacker, goal, args.depth):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cits-sim", description="C-ITS attack-scenario simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a topology file")
    p.add_argument("--topology", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a topology, optionally under an attack scenario")
    p.add_argument("--topology", required=True)
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int, action="append",
                   help="RNG seed (default 0); repeat for several runs")
    p.add_argument("--horizon-ms", type=int, default=60_000)
    p.add_argument("--tick-ms", type=int, default=1000)
    p.add_argument("--trace", help="trace JSONL output path")
    p.add_argument("--report", help="report JSON output path")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes across seeds")
    p.add_argument("--quiet", action="store_true", help="suppress the text summary")
    p.add_argument("--timing", action="store_true", help="print wall-clock time to stderr")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack-paths", help="enumerate minimal attack paths to a goal")
    p.add_argument("--topology", required=True)
    p.add_argument("--catalog", help="vulnerability catalog (default: shipped cves.json)")
    p.add_argument("--attacker", required=True)
    p.add_argument("--goal", required=True, help="e.g. signal-control, db-write, signal-control:RSU-1")
    p.add_argument("--depth", type=int, default=4)
    p.set_defaults(func=cmd_attack_paths)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
