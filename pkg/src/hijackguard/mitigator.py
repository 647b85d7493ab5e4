"""Automatic de-aggregation in response to hijack alarms, and recovery tracking."""

from __future__ import annotations

import abc
import csv
import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .detector import HijackAlarm, OwnedPrefixTable, Verdict
from .feeds import FeedEvent
from .prefix import DEFAULT_FLOOR, IpPrefix, OutcomeKind, deaggregate, forwarding_origins

log = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = 30 * 60 * 1000
DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF_MS = 100


class RouterCommandError(RuntimeError):
    pass


class Action(enum.Enum):
    ANNOUNCE = "ANNOUNCE"
    WITHDRAW = "WITHDRAW"


@dataclass(frozen=True)
class Command:
    action: Action
    prefix: IpPrefix
    origin: Optional[int] = None

    def format(self, timestamp: int) -> str:
        tail = f" {self.origin}" if self.origin is not None else ""
        return f"{timestamp} CMD {self.action.value} {self.prefix}{tail}"


@dataclass(frozen=True)
class MitigationPlan:
    alarm: HijackAlarm
    target: IpPrefix
    announcements: tuple[tuple[IpPrefix, int], ...]
    outcome_kind: OutcomeKind
    created_at: int

    @property
    def escalate(self) -> bool:
        """Nothing can be announced automatically; an operator must act."""
        return self.outcome_kind is OutcomeKind.FILTERED_FLOOR

    def commands(self) -> list[Command]:
        return [Command(Action.ANNOUNCE, p, o) for p, o in self.announcements]


def plan(alarm: HijackAlarm, table: OwnedPrefixTable, floor_length: int = DEFAULT_FLOOR,
         now: Optional[int] = None) -> MitigationPlan:
    # exact: split the owned prefix; sub-prefix: out-specific the hijacker's announcement
    if alarm.kind is Verdict.EXACT_HIJACK:
        target = alarm.owned_prefix
    else:
        target = alarm.announced_prefix
    outcome = deaggregate(target, floor_length)
    origin = table.primary_origin(alarm.owned_prefix)
    announcements = tuple((p, origin) for p in outcome.prefixes)
    created = alarm.first_seen if now is None else now
    result = MitigationPlan(alarm, target, announcements, outcome.kind, created)
    if result.escalate:
        log.warning("cannot de-aggregate %s below /%d: operator action needed", target, floor_length)
    return result


class RouterCommandInterface(abc.ABC):
    """Command sink in front of the AS's BGP routers.

    ``submit`` returns the acknowledgment timestamp or raises
    RouterCommandError. Commands are applied in submission order.
    """

    @abc.abstractmethod
    def submit(self, command: Command, at: int) -> int:
        ...


class FileLogRouter(RouterCommandInterface):
    """Appends ``<timestamp_ms> CMD <ANNOUNCE|WITHDRAW> <prefix> [<origin>]`` lines."""

    def __init__(self, path):
        self.path = Path(path)

    def submit(self, command: Command, at: int) -> int:
        try:
            with self.path.open("a") as fh:
                fh.write(command.format(at) + "\n")
        except OSError as exc:
            raise RouterCommandError(str(exc)) from exc
        return at


class RecordingRouter(RouterCommandInterface):
    """Keeps commands in memory; handy for dry runs."""

    def __init__(self):
        self.log: list[tuple[int, Command]] = []

    def submit(self, command: Command, at: int) -> int:
        self.log.append((at, command))
        return at


@dataclass
class ExecutionReport:
    plan: MitigationPlan
    acks: list[tuple[Command, int]] = field(default_factory=list)
    failed: list[Command] = field(default_factory=list)
    retries: int = 0
    escalated: bool = False

    @property
    def start_time(self) -> Optional[int]:
        return self.acks[0][1] if self.acks else None


def execute(plan: MitigationPlan, iface: RouterCommandInterface, now: Optional[int] = None,
            max_attempts: int = DEFAULT_ATTEMPTS, backoff_ms: int = DEFAULT_BACKOFF_MS) -> ExecutionReport:
    """Submit every announcement in order, retrying failures with doubling backoff.

    Retry waits are expressed on the command clock (``at``), never as
    sleeps, so a simulated clock stays in charge of time.
    """
    if not plan.announcements:
        raise ValueError("empty plan: nothing to execute")
    clock = int(time.time() * 1000) if now is None else now
    report = ExecutionReport(plan)
    for command in plan.commands():
        at, wait = clock, backoff_ms
        for attempt in range(1, max_attempts + 1):
            try:
                ack = iface.submit(command, at)
            except RouterCommandError as exc:
                log.warning("command %s failed (attempt %d/%d): %s", command, attempt, max_attempts, exc)
                if attempt == max_attempts:
                    report.failed.append(command)
                    report.escalated = True
                    break
                report.retries += 1
                at += wait
                wait *= 2
            else:
                report.acks.append((command, ack))
                clock = max(clock, at)
                break
    return report


class VantageState(enum.Enum):
    INFECTED = "infected"
    RECOVERED = "recovered"
    UNKNOWN = "unknown"


class MitigationProgress:
    """Per-vantage recovery state for one plan, driven by feed events.

    A vantage is Recovered once every address of the hijacked space is
    forwarded toward a legitimate origin by its latest known routes, and
    Infected while any address still reaches another origin.
    """

    def __init__(self, plan: MitigationPlan, legitimate: Iterable[int],
                 window_ms: int = DEFAULT_WINDOW_MS):
        self.plan = plan
        self.legitimate = frozenset(legitimate)
        self.window_ms = window_ms
        self.routes: dict[int, dict[IpPrefix, int]] = {}
        self.states: dict[int, VantageState] = {}
        self.ever_infected: set[int] = set()
        self.snapshots: list[tuple[int, int, int, float]] = []

    @property
    def target(self) -> IpPrefix:
        return self.plan.target

    def seed(self, routes: dict[int, dict[IpPrefix, int]], now: int) -> None:
        """Start from routes observed before the plan existed."""
        for vantage, table in routes.items():
            relevant = {p: o for p, o in table.items() if p.overlaps(self.target)}
            if relevant:
                self.routes[vantage] = relevant
                self._evaluate(vantage)
        self._snapshot(now)

    def update(self, event: FeedEvent) -> bool:
        """Apply one event; returns True when some vantage changed state."""
        if not event.prefix.overlaps(self.target):
            return False
        if event.timestamp > self.plan.created_at + self.window_ms:
            return False
        table = self.routes.setdefault(event.vantage_asn, {})
        if event.is_announce:
            table[event.prefix] = event.origin
        else:
            table.pop(event.prefix, None)
        changed = self._evaluate(event.vantage_asn)
        if changed:
            self._snapshot(event.timestamp)
        return changed

    def _evaluate(self, vantage: int) -> bool:
        reached = forwarding_origins(self.routes.get(vantage, {}), self.target)
        if reached - self.legitimate - {None}:
            state = VantageState.INFECTED
            self.ever_infected.add(vantage)
        elif reached and None not in reached:
            state = VantageState.RECOVERED
        else:
            state = VantageState.UNKNOWN
        old = self.states.get(vantage)
        self.states[vantage] = state
        return old is not state

    @property
    def recovered_count(self) -> int:
        return sum(1 for v in self.ever_infected if self.states[v] is VantageState.RECOVERED)

    @property
    def infected_count(self) -> int:
        return sum(1 for s in self.states.values() if s is VantageState.INFECTED)

    @property
    def recovered_fraction(self) -> float:
        # vacuously complete when no vantage was ever infected
        if not self.ever_infected:
            return 1.0
        return self.recovered_count / len(self.ever_infected)

    @property
    def complete(self) -> bool:
        return self.recovered_count == len(self.ever_infected)

    def _snapshot(self, now: int) -> None:
        self.snapshots.append((now, self.recovered_count, self.infected_count, self.recovered_fraction))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ms", "recovered_count", "infected_count", "fraction"])
            for row in self.snapshots:
                writer.writerow([row[0], row[1], row[2], repr(row[3])])


def track_progress(progress: MitigationProgress, event: FeedEvent) -> MitigationProgress:
    progress.update(event)
    return progress


def rib_overhead(plans: Iterable[MitigationPlan]) -> int:
    return sum(len(p.announcements) - 1 for p in plans if p.outcome_kind is OutcomeKind.SPLIT)


class Mitigator:
    """Turns alarms into executed plans with no operator in the loop.

    Keeps a per-vantage view of every route inside owned space so that a
    plan created late (deferred mitigation) starts from the current state.
    """

    def __init__(self, table: OwnedPrefixTable, router: RouterCommandInterface,
                 floor_length: int = DEFAULT_FLOOR, window_ms: int = DEFAULT_WINDOW_MS,
                 max_attempts: int = DEFAULT_ATTEMPTS, backoff_ms: int = DEFAULT_BACKOFF_MS,
                 on_escalation: Optional[Callable[[MitigationPlan], None]] = None):
        self.table = table
        self.router = router
        self.floor_length = floor_length
        self.window_ms = window_ms
        self.max_attempts = max_attempts
        self.backoff_ms = backoff_ms
        self.on_escalation = on_escalation
        self.active: dict[IpPrefix, MitigationPlan] = {}
        self.reports: list[ExecutionReport] = []
        self.escalations: list[MitigationPlan] = []
        self.progress: dict[IpPrefix, MitigationProgress] = {}
        self.view: dict[int, dict[IpPrefix, int]] = {}

    def observe(self, event: FeedEvent) -> None:
        if self.table.lookup(event.prefix) is None:
            return
        table = self.view.setdefault(event.vantage_asn, {})
        if event.is_announce:
            table[event.prefix] = event.origin
        else:
            table.pop(event.prefix, None)
        for progress in self.progress.values():
            progress.update(event)

    def respond(self, alarm: HijackAlarm, now: int) -> Optional[ExecutionReport]:
        mitigation = plan(alarm, self.table, self.floor_length, now=now)
        if mitigation.escalate:
            self.escalations.append(mitigation)
            if self.on_escalation is not None:
                self.on_escalation(mitigation)
            return None
        if mitigation.target in self.active:
            # the same sub-prefixes already answer an earlier alarm
            return None
        report = execute(mitigation, self.router, now, self.max_attempts, self.backoff_ms)
        self.reports.append(report)
        if report.escalated:
            self.escalations.append(mitigation)
            if self.on_escalation is not None:
                self.on_escalation(mitigation)
        if report.acks:
            self.active[mitigation.target] = mitigation
            progress = MitigationProgress(mitigation, self.table.origins(alarm.owned_prefix), self.window_ms)
            progress.seed(self.view, now)
            self.progress[mitigation.target] = progress
        return report

    def retire(self, target: IpPrefix) -> MitigationPlan:
        self.progress.pop(target, None)
        return self.active.pop(target)

    def rib_overhead(self) -> int:
        return rib_overhead(self.active.values())
