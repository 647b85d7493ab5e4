"""Event-driven path-vector simulation under valley-free export rules.

One router per AS, one independent decision process per prefix. Update
delays are drawn per (directed edge, prefix, origin, message index) and delivery
is FIFO per (edge, prefix), so each prefix evolves exactly as it would
on its own, shifted by its origination time.
"""

from __future__ import annotations

import heapq
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol

from ..delay import DelayModel
from ..feeds import Archetype, EventKind, FeedEvent, Poller, SourceDescriptor, format_record
from ..mitigator import Action, Command, RouterCommandError, RouterCommandInterface
from ..prefix import IpPrefix, deaggregate
from .scenario import Scenario, ScenarioError
from .topology import Rel, Topology

log = logging.getLogger(__name__)

DEFAULT_ROUTER_DELAY_MS = 50
DEFAULT_MARGIN_MS = 5000

_ORIGINATE, _WITHDRAW_ORIGIN, _UPDATE, _FLUSH, _DELIVER, _CALL, _TICK = range(7)


@dataclass(frozen=True)
class Route:
    """A selected or candidate route at one AS.

    ``as_path`` is the path as received: its head is the neighbor it was
    learned from and its tail the origin. A locally originated route has
    ``learned_from=None`` and the path ``(own_asn,)``.
    """

    prefix: IpPrefix
    as_path: tuple[int, ...]
    learned_from: Optional[int] = None

    @property
    def origin(self) -> int:
        return self.as_path[-1]

    @property
    def is_local(self) -> bool:
        return self.learned_from is None


def export_path(asn: int, route: Route) -> tuple[int, ...]:
    return route.as_path if route.learned_from is None else (asn,) + route.as_path


def route_rank(route: Route, relationships: Mapping[int, Rel]) -> tuple:
    """Smaller is better: local, then customer > peer > provider, shorter, lower neighbor."""
    if route.learned_from is None:
        return (-3, 0, -1)
    return (-int(relationships[route.learned_from]), len(route.as_path), route.learned_from)


def decide(candidates: Iterable[Route], relationships: Mapping[int, Rel]) -> Route:
    candidates = list(candidates)
    if not candidates:
        raise ValueError("decide() needs at least one candidate")
    return min(candidates, key=lambda r: route_rank(r, relationships))


class FeedConsumer(Protocol):
    def __call__(self, event: FeedEvent, sim: "Simulator") -> None: ...


@dataclass
class EventTrace:
    """Everything observable about one run, in processing order."""

    asns: tuple[int, ...]
    markers: dict[str, int] = field(default_factory=dict)
    best_changes: list[tuple[int, int, IpPrefix, Optional[Route]]] = field(default_factory=list)
    updates: list[tuple[int, int, int, int, IpPrefix, Optional[tuple[int, ...]]]] = field(default_factory=list)
    feed: list[FeedEvent] = field(default_factory=list)
    commands: list[tuple[int, int, str, IpPrefix, str]] = field(default_factory=list)
    final_best: dict[int, dict[IpPrefix, Route]] = field(default_factory=dict)
    hijacker_asn: Optional[int] = None
    hijacked_prefix: Optional[IpPrefix] = None
    legitimate_origins: tuple[int, ...] = ()
    vantage_asns: tuple[int, ...] = ()

    def feed_lines(self) -> list[str]:
        return [format_record(e) for e in self.feed]

    def write(self, path) -> None:
        """Feed records preceded by ``# GT <marker> <ms>`` ground-truth lines."""
        with Path(path).open("w") as fh:
            for name, value in sorted(self.markers.items(), key=lambda kv: (kv[1], kv[0])):
                fh.write(f"# GT {name} {value}\n")
            for line in self.feed_lines():
                fh.write(line + "\n")


def read_markers(path) -> dict[str, int]:
    markers = {}
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("# GT "):
                _, _, name, value = line.split()
                markers[name] = int(value)
    return markers


class _AsState:
    __slots__ = ("asn", "rel", "adj_in", "local", "best", "adj_out")

    def __init__(self, asn: int, rel: dict[int, Rel]):
        self.asn = asn
        self.rel = rel
        self.adj_in: dict[IpPrefix, dict[int, tuple[int, ...]]] = defaultdict(dict)
        self.local: dict[IpPrefix, Route] = {}
        self.best: dict[IpPrefix, Route] = {}
        self.adj_out: dict[IpPrefix, dict[int, tuple[int, ...]]] = defaultdict(dict)


class Simulator:
    """Single-threaded discrete-event loop keyed by (time, sequence)."""

    def __init__(self, topology: Topology, *, floor: int = 24, seed: Optional[int] = None,
                 mrai_ms: int = 0, record_updates: bool = True,
                 sources: Optional[dict[str, SourceDescriptor]] = None,
                 consumer: Optional[FeedConsumer] = None, margin_ms: Optional[int] = None,
                 speed_factor: Optional[float] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        self.topology = topology
        # wall-clock pacing for demos; None runs as fast as possible
        if speed_factor is not None and not speed_factor > 0:
            raise ValueError("speed_factor must be positive")
        self.speed_factor = speed_factor
        self._sleep = sleep
        self._clock = clock
        self.floor = floor
        self.seed = topology.seed if seed is None else seed
        self.mrai_ms = mrai_ms
        self.record_updates = record_updates
        self.consumer = consumer
        self.now = 0
        self.states = {asn: _AsState(asn, topology.rel[asn]) for asn in sorted(topology.nodes)}
        self.sources = topology.resolve_sources() if sources is None else sources
        self._push_by_vantage: dict[int, list[SourceDescriptor]] = defaultdict(list)
        self._pollers: dict[str, Poller] = {}
        for desc in self.sources.values():
            if desc.archetype is Archetype.PUSH_STREAM:
                for v in desc.vantage_asns:
                    self._push_by_vantage[v].append(desc)
            else:
                self._pollers[desc.source_id] = Poller(desc)
        polls = [d.poll_interval_ms for d in self.sources.values()
                 if d.archetype is Archetype.POLLING_SNAPSHOT]
        self.margin_ms = margin_ms if margin_ms is not None else max(polls, default=0) + DEFAULT_MARGIN_MS
        self.trace = EventTrace(
            asns=tuple(sorted(topology.nodes)),
            vantage_asns=tuple(sorted({v for d in self.sources.values() for v in d.vantage_asns})),
        )
        self._queue: list = []
        self._seq = 0
        self._pending = 0
        self._last_activity = 0
        self._quiescence: list[Callable[[int], None]] = []
        self._msg_count: dict = defaultdict(int)
        self._last_arrival: dict = {}
        self._mrai_pending: set = set()
        self._feed_count: dict = defaultdict(int)
        self._feed_last: dict = {}
        self._delays: dict[tuple[int, int], DelayModel] = {}
        for sid, poller in sorted(self._pollers.items()):
            interval = poller.descriptor.poll_interval_ms
            phase = DelayModel("uniform", 0, max(0, interval - 1)).sample(self.seed, "phase", sid)
            self._push(phase, _TICK, sid, periodic=True)

    # scheduling -----------------------------------------------------------

    def _push(self, at: int, kind: int, payload, periodic: bool = False) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at}, clock is at {self.now}")
        heapq.heappush(self._queue, (at, self._seq, kind, payload))
        self._seq += 1
        if not periodic:
            self._pending += 1

    def _check_asn(self, asn: int) -> None:
        if asn not in self.states:
            raise ScenarioError(f"AS{asn} is not in the topology")

    def originate(self, asn: int, prefix: IpPrefix, at: int, tag: str = "originate") -> None:
        self._check_asn(asn)
        self._push(at, _ORIGINATE, (asn, prefix, tag))

    def withdraw_origin(self, asn: int, prefix: IpPrefix, at: int, tag: str = "withdraw") -> None:
        self._check_asn(asn)
        self._push(at, _WITHDRAW_ORIGIN, (asn, prefix, tag))

    def call_at(self, at: int, fn: Callable[[], None]) -> None:
        self._push(at, _CALL, fn)

    def at_quiescence(self, fn: Callable[[int], None]) -> None:
        """Run ``fn(last_activity_time)`` once no non-periodic events remain."""
        self._quiescence.append(fn)

    def mark(self, name: str, at: Optional[int] = None) -> None:
        self.trace.markers.setdefault(name, self.now if at is None else at)

    # state ----------------------------------------------------------------

    def best(self, asn: int) -> dict[IpPrefix, Route]:
        return self.states[asn].best

    def best_routes(self) -> dict[int, dict[IpPrefix, Route]]:
        return {asn: dict(st.best) for asn, st in self.states.items()}

    def snapshot(self, vantages: Iterable[int]) -> dict[tuple[int, IpPrefix], tuple[int, ...]]:
        out = {}
        for v in vantages:
            for prefix, route in self.states[v].best.items():
                out[(v, prefix)] = export_path(v, route)
        return out

    # main loop ------------------------------------------------------------

    def run(self, until: Optional[int] = None) -> EventTrace:
        queue = self._queue
        wall_start = self._clock()
        while True:
            if self._pending == 0 and self._quiescence:
                self._quiescence.pop(0)(self._last_activity)
                continue
            if not queue:
                break
            at, _, kind, payload = queue[0]
            if until is not None and at > until:
                break
            if kind == _TICK and self._pending == 0 and at > self._last_activity + self.margin_ms:
                break
            heapq.heappop(queue)
            if self.speed_factor is not None:
                lag = at / 1000.0 / self.speed_factor - (self._clock() - wall_start)
                if lag > 0:
                    self._sleep(lag)
            self.now = at
            if kind == _TICK:
                self._on_tick(payload)
                continue
            self._pending -= 1
            # quiescence is about routing; what the monitors see does not move it
            if kind != _DELIVER:
                self._last_activity = at
            if kind == _UPDATE:
                self._on_update(*payload)
            elif kind == _DELIVER:
                self._deliver(payload)
            elif kind == _ORIGINATE:
                self._on_originate(*payload)
            elif kind == _WITHDRAW_ORIGIN:
                self._on_withdraw_origin(*payload)
            elif kind == _FLUSH:
                self._mrai_pending.discard(payload)
                self._export(self.states[payload[0]], payload[1])
            elif kind == _CALL:
                payload()
        self.trace.markers["end"] = self.now
        self.trace.final_best = self.best_routes()
        return self.trace

    # handlers -------------------------------------------------------------

    def _on_originate(self, asn: int, prefix: IpPrefix, tag: str) -> None:
        st = self.states[asn]
        self.trace.commands.append((self.now, asn, "announce", prefix, tag))
        st.local[prefix] = Route(prefix, (asn,), None)
        self._reselect(st, prefix)

    def _on_withdraw_origin(self, asn: int, prefix: IpPrefix, tag: str) -> None:
        st = self.states[asn]
        self.trace.commands.append((self.now, asn, "withdraw", prefix, tag))
        if st.local.pop(prefix, None) is not None:
            self._reselect(st, prefix)

    def _on_update(self, src: int, dst: int, prefix: IpPrefix, path, sent: int) -> None:
        if self.record_updates:
            self.trace.updates.append((self.now, sent, src, dst, prefix, path))
        if path is not None and (prefix.length > self.floor or dst in path):
            path = None
        st = self.states[dst]
        adj = st.adj_in[prefix]
        if path is None:
            if adj.pop(src, None) is None:
                return
        else:
            if adj.get(src) == path:
                return
            adj[src] = path
        self._reselect(st, prefix)

    def _reselect(self, st: _AsState, prefix: IpPrefix) -> None:
        best_key = None
        winner = None
        local = st.local.get(prefix)
        if local is not None:
            winner = local
        else:
            rel = st.rel
            for nbr, path in st.adj_in[prefix].items():
                key = (-int(rel[nbr]), len(path), nbr)
                if best_key is None or key < best_key:
                    best_key, winner = key, (nbr, path)
            if winner is not None:
                winner = Route(prefix, winner[1], winner[0])
        old = st.best.get(prefix)
        if winner == old:
            return
        if winner is None:
            del st.best[prefix]
        else:
            st.best[prefix] = winner
        self.trace.best_changes.append((self.now, st.asn, prefix, winner))
        self._observe(st.asn, prefix, winner)
        if self.mrai_ms > 0:
            key = (st.asn, prefix)
            if key not in self._mrai_pending:
                self._mrai_pending.add(key)
                self._push(self.now + self.mrai_ms, _FLUSH, key)
        else:
            self._export(st, prefix)

    def _export(self, st: _AsState, prefix: IpPrefix) -> None:
        best = st.best.get(prefix)
        out = st.adj_out[prefix]
        path = None
        wide = False
        if best is not None:
            path = export_path(st.asn, best)
            wide = best.learned_from is None or st.rel[best.learned_from] is Rel.CUSTOMER
        for nbr, rel in st.rel.items():
            desired = path if path is not None and (wide or rel is Rel.CUSTOMER) and nbr not in path else None
            if out.get(nbr) != desired:
                if desired is None:
                    del out[nbr]
                else:
                    out[nbr] = desired
                self._send(st.asn, nbr, prefix, desired)

    def _send(self, src: int, dst: int, prefix: IpPrefix, path) -> None:
        key = (src, dst, prefix)
        # draws are indexed per origin so one origin's churn never reshuffles another's delays
        origin = path[-1] if path is not None else None
        counter = (src, dst, prefix, origin)
        k = self._msg_count[counter]
        self._msg_count[counter] = k + 1
        model = self._delays.get((src, dst))
        if model is None:
            model = self._delays[(src, dst)] = self.topology.delay_for(src, dst)
        delay = model.sample(self.seed, src, dst, prefix.base, prefix.length, origin, k)
        arrival = max(self.now + delay, self._last_arrival.get(key, 0))
        self._last_arrival[key] = arrival
        self._push(arrival, _UPDATE, (src, dst, prefix, path, self.now))

    # monitoring -----------------------------------------------------------

    def _observe(self, asn: int, prefix: IpPrefix, route: Optional[Route]) -> None:
        for desc in self._push_by_vantage.get(asn, ()):
            sid = desc.source_id
            origin = route.origin if route is not None else None
            counter = (sid, asn, prefix, origin)
            n = self._feed_count[counter]
            self._feed_count[counter] = n + 1
            lag = desc.per_event_latency.sample(self.seed, "feed", sid, asn, prefix.base, prefix.length, origin, n)
            # each collector session is FIFO
            ts = max(self.now + lag, self._feed_last.get((sid, asn), 0))
            self._feed_last[(sid, asn)] = ts
            if route is None:
                event = FeedEvent(ts, sid, asn, EventKind.WITHDRAW, prefix)
            else:
                event = FeedEvent(ts, sid, asn, EventKind.ANNOUNCE, prefix, export_path(asn, route))
            self._push(ts, _DELIVER, event)

    def _deliver(self, event: FeedEvent) -> None:
        self.trace.feed.append(event)
        if self.consumer is not None:
            self.consumer(event, self)

    def _on_tick(self, sid: str) -> None:
        poller = self._pollers[sid]
        for event in poller.tick(self.now, self.snapshot):
            self._deliver(event)
        self._push(self.now + poller.descriptor.poll_interval_ms, _TICK, sid, periodic=True)


class SimnetRouter(RouterCommandInterface):
    """Applies router commands inside a running simulation after a fixed delay."""

    def __init__(self, sim: Simulator, asn: int, delay_ms: int = DEFAULT_ROUTER_DELAY_MS):
        self.sim = sim
        self.asn = asn
        self.delay_ms = delay_ms

    def submit(self, command: Command, at: int) -> int:
        if command.origin is not None and command.origin != self.asn:
            raise RouterCommandError(f"AS{self.asn} cannot originate as AS{command.origin}")
        applied = max(at, self.sim.now) + self.delay_ms
        if command.action is Action.ANNOUNCE:
            self.sim.originate(self.asn, command.prefix, applied, tag="command")
        else:
            self.sim.withdraw_origin(self.asn, command.prefix, applied, tag="command")
        self.sim.mark("mitigation_start", applied)
        return applied


def run(topology: Topology, scenario: Scenario, *, seed: Optional[int] = None,
        consumer: Optional[FeedConsumer] = None, mrai_ms: int = 0,
        record_updates: bool = True, margin_ms: Optional[int] = None,
        router_delay_ms: int = DEFAULT_ROUTER_DELAY_MS,
        sources: Optional[dict[str, SourceDescriptor]] = None,
        speed_factor: Optional[float] = None) -> EventTrace:
    """Run one hijack scenario to quiescence.

    Without a ``consumer`` the mitigation policy is applied from ground
    truth: de-aggregation starts ``router_delay_ms`` (immediate) or the
    deferral after the hijack is launched. With a consumer, the consumer
    sees the feed and decides when to mitigate.
    """
    for asn in scenario.asns():
        if asn not in topology.nodes:
            raise ScenarioError(f"scenario references unknown AS{asn}")
    sim = Simulator(topology, floor=scenario.floor, seed=seed, mrai_ms=mrai_ms,
                    record_updates=record_updates, sources=sources, consumer=consumer,
                    margin_ms=margin_ms, speed_factor=speed_factor)
    trace = sim.trace
    trace.hijacker_asn = scenario.hijacker_asn
    trace.hijacked_prefix = scenario.hijacked_prefix
    trace.legitimate_origins = scenario.legitimate_origins
    sim.originate(scenario.legitimate_asn, scenario.legitimate_prefix, 0, tag="legitimate")
    sim.mark("legitimate_start", 0)

    def launch(at: int) -> None:
        sim.originate(scenario.hijacker_asn, scenario.hijacked_prefix, at, tag="hijack")
        sim.mark("hijack_start", at)
        if consumer is None and scenario.mitigation.enabled:
            outcome = deaggregate(scenario.mitigation_target, scenario.floor)
            start = at + router_delay_ms + scenario.mitigation.delay_ms
            for p in outcome.prefixes:
                sim.originate(scenario.legitimate_asn, p, start, tag="mitigation")
            if outcome.prefixes:
                sim.mark("mitigation_start", start)

    if scenario.hijacker_asn is not None:
        if scenario.hijack_at is None:
            sim.at_quiescence(lambda last: launch(last + sim.margin_ms))
        else:
            launch(scenario.hijack_at)
    return sim.run()
