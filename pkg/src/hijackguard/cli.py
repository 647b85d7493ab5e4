"""Command-line entry points.

    hijackguard simulate <topology> <scenario> [--seed N] [--trace out]
    hijackguard monitor --config <owned> --replay <trace> [--alarm-log path]
    hijackguard experiment <sweep> --out <csv> [--summary path]
    hijackguard oracle <topology> <scenario>
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections import Counter
from typing import Optional, Sequence

from . import __version__
from .detector import Detector, load_config
from .feeds import open_replay
from .harness import emit_csv, emit_summary_csv, load_sweep, run_experiment, run_sweep, summarize
from .mitigator import FileLogRouter, Mitigator, RecordingRouter
from .simnet.engine import run as simulate
from .simnet.metrics import infected_fraction
from .simnet.oracle import fixpoint_oracle
from .simnet.topology import build_topology
from .simnet.scenario import load_scenario

log = logging.getLogger("hijackguard")


def _load_instance(args):
    topology = build_topology(args.topology)
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else topology.seed
    return topology, scenario, seed


def cmd_simulate(args) -> int:
    topology, scenario, seed = _load_instance(args)
    speed = args.speed if args.realtime else None
    if args.no_monitor:
        trace = simulate(topology, scenario, seed=seed, speed_factor=speed)
        alarm_kind = delay = None
    else:
        result = run_experiment(topology, scenario, seed, keep_trace=True,
                                alarm_log=args.alarm_log, speed_factor=speed)
        trace = result.trace
        alarm_kind, delay = result.alarm_kind, result.detection_delay
    if args.trace:
        trace.write(args.trace)
    markers = " ".join(f"{k}={v}" for k, v in sorted(trace.markers.items(), key=lambda kv: kv[1]))
    print(f"seed {seed}: {len(trace.asns)} ASes, {len(trace.feed)} feed events, {markers}")
    if scenario.hijacker_asn is not None:
        frac = infected_fraction(trace, time=trace.markers.get("mitigation_start"))
        print(f"infected fraction before mitigation: {frac:.4f}")
        print(f"infected fraction at end: {infected_fraction(trace):.4f}")
        if not args.no_monitor:
            print(f"alarm: {alarm_kind or 'none'}, detection delay: "
                  f"{'undetected' if delay is None else f'{delay} ms'}")
    return 0


def cmd_monitor(args) -> int:
    table = load_config(args.config)
    speed = args.speed if args.speed is not None else (1.0 if args.realtime else math.inf)
    replay = open_replay(args.replay, speed)
    detector = Detector(table, alarm_log=args.alarm_log)
    router = FileLogRouter(args.commands) if args.commands else RecordingRouter()
    mitigator = None if args.no_mitigation else Mitigator(table, router, args.floor)
    alarms = 0
    for event in replay:
        if mitigator is not None:
            mitigator.observe(event)
        alarm = detector.process(event)
        if alarm is None:
            continue
        alarms += 1
        print(alarm.format())
        if mitigator is not None:
            report = mitigator.respond(alarm, event.timestamp)
            if report is not None and not args.commands:
                for command, at in report.acks:
                    print(command.format(at))
    rejected = sum(replay.rejected.values())
    print(f"{detector.processed} events, {alarms} alarms, {rejected} rejected records", file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    spec = load_sweep(args.sweep)
    if args.seed is not None:
        spec.master_seed = args.seed
    results = run_sweep(spec, jobs=args.jobs)
    emit_csv(results, args.out)
    if args.summary:
        emit_summary_csv(summarize(results), args.summary)
    failed = [r for r in results if r.error]
    undetected = sum(1 for r in results if r.error is None and not r.detected)
    print(f"{len(results)} runs, {undetected} undetected, {len(failed)} failed", file=sys.stderr)
    for r in failed:
        print(f"failed: {r.scenario_id} seed {r.seed}: {r.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_oracle(args) -> int:
    topology, scenario, _ = _load_instance(args)
    announcements = [(o, scenario.legitimate_prefix) for o in scenario.legitimate_origins]
    if scenario.hijacker_asn is not None:
        announcements.append((scenario.hijacker_asn, scenario.hijacked_prefix))
    ribs = fixpoint_oracle(topology, announcements, floor=scenario.floor)
    prefixes = sorted({p for routes in ribs.values() for p in routes})
    print(f"{len(ribs)} ASes, {len(prefixes)} prefixes")
    for prefix in prefixes:
        origins = Counter(routes[prefix].origin for routes in ribs.values() if prefix in routes)
        unrouted = sum(1 for routes in ribs.values() if prefix not in routes)
        counts = " ".join(f"AS{o}={n}" for o, n in sorted(origins.items()))
        print(f"{prefix} {counts} unrouted={unrouted}")
    if scenario.hijacker_asn is not None:
        frac = infected_fraction(ribs, scenario.hijacked_prefix, offender=scenario.hijacker_asn)
        print(f"infected fraction: {frac:.4f}")
    if args.verbose:
        for asn in sorted(ribs):
            for prefix, route in sorted(ribs[asn].items()):
                print(f"AS{asn} {prefix} {' '.join(map(str, route.as_path))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hijackguard", description="Prefix hijack monitoring and simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario through the full pipeline")
    p.add_argument("topology")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", help="write feed records and ground-truth markers here")
    p.add_argument("--alarm-log")
    p.add_argument("--no-monitor", action="store_true", help="apply mitigation from ground truth instead")
    p.add_argument("--realtime", action="store_true", help="pace the simulated clock against the wall clock")
    p.add_argument("--speed", type=float, default=1.0, help="simulated seconds per wall second with --realtime")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("monitor", help="detect and mitigate over a recorded feed")
    p.add_argument("--config", required=True, help="owned-prefix table")
    p.add_argument("--replay", required=True, help="feed record file")
    p.add_argument("--alarm-log")
    p.add_argument("--commands", help="append router commands to this file")
    p.add_argument("--no-mitigation", action="store_true")
    p.add_argument("--floor", type=int, default=24)
    p.add_argument("--realtime", action="store_true")
    p.add_argument("--speed", type=float, help="replay speed factor (implies pacing)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("experiment", help="run a scenario sweep and write CSV")
    p.add_argument("sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="also write per-cell quantile statistics")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="print the converged routing state")
    p.add_argument("topology")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
