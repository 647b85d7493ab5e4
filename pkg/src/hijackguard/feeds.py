"""Normalized BGP update observations and the sources that produce them.

Record line format, one event per line::

    <timestamp_ms> <source_id> <vantage_asn> <A|W> <prefix> [<asn,asn,...>]
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

from .delay import DelayModel
from .prefix import IpPrefix, PrefixError, parse_prefix

log = logging.getLogger(__name__)

DEFAULT_REORDER_WINDOW_MS = 2000


class FeedFormatError(ValueError):
    pass


class ReplayError(RuntimeError):
    pass


class EventKind(enum.Enum):
    ANNOUNCE = "A"
    WITHDRAW = "W"


class Archetype(enum.Enum):
    PUSH_STREAM = "push"
    POLLING_SNAPSHOT = "poll"


@dataclass(frozen=True)
class FeedEvent:
    timestamp: int
    source_id: str
    vantage_asn: int
    kind: EventKind
    prefix: IpPrefix
    as_path: tuple[int, ...] = ()
    # set by the mux when an event arrives outside the reorder window
    late: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind is EventKind.ANNOUNCE and not self.as_path:
            raise FeedFormatError("announce without AS path")
        if self.kind is EventKind.WITHDRAW and self.as_path:
            raise FeedFormatError("withdraw carrying an AS path")
        if has_origin_loop(self.as_path):
            raise FeedFormatError(f"looped AS path {self.as_path}")

    @property
    def is_announce(self) -> bool:
        return self.kind is EventKind.ANNOUNCE

    @property
    def origin(self) -> Optional[int]:
        return self.as_path[-1] if self.as_path else None


def has_origin_loop(path: Sequence[int]) -> bool:
    """True when an ASN reappears after a different ASN (prepending is fine)."""
    seen = set()
    prev = None
    for asn in path:
        if asn != prev:
            if asn in seen:
                return True
            seen.add(asn)
        prev = asn
    return False


def normalize(line: str) -> FeedEvent:
    parts = line.split()
    if len(parts) not in (5, 6):
        raise FeedFormatError(f"expected 5 or 6 fields, got {len(parts)}: {line.strip()!r}")
    ts_text, source_id, vantage_text, kind_text, prefix_text = parts[:5]
    try:
        timestamp = int(ts_text)
        vantage = int(vantage_text)
    except ValueError:
        raise FeedFormatError(f"non-integer timestamp or vantage: {line.strip()!r}") from None
    try:
        kind = EventKind(kind_text)
    except ValueError:
        raise FeedFormatError(f"unknown event kind {kind_text!r}") from None
    try:
        prefix = parse_prefix(prefix_text)
    except PrefixError as exc:
        raise FeedFormatError(str(exc)) from None
    path: tuple[int, ...] = ()
    if len(parts) == 6:
        try:
            path = tuple(int(a) for a in parts[5].split(","))
        except ValueError:
            raise FeedFormatError(f"bad AS path {parts[5]!r}") from None
    return FeedEvent(timestamp, source_id, vantage, kind, prefix, path)


def format_record(event: FeedEvent) -> str:
    fields = [str(event.timestamp), event.source_id, str(event.vantage_asn), event.kind.value, str(event.prefix)]
    if event.as_path:
        fields.append(",".join(map(str, event.as_path)))
    return " ".join(fields)


@dataclass
class SourceDescriptor:
    source_id: str
    archetype: Archetype
    vantage_asns: list[int]
    poll_interval: Optional[float] = None  # seconds
    per_event_latency: DelayModel = field(default_factory=lambda: DelayModel.fixed(0))

    def __post_init__(self) -> None:
        if not self.vantage_asns:
            raise ValueError(f"source {self.source_id!r} has no vantage ASes")
        if self.archetype is Archetype.POLLING_SNAPSHOT:
            if self.poll_interval is None or self.poll_interval <= 0:
                raise ValueError(f"polling source {self.source_id!r} needs poll_interval > 0")

    @property
    def poll_interval_ms(self) -> int:
        return int(round((self.poll_interval or 0) * 1000))


class Replay:
    """Iterates FeedEvents from a record file.

    Malformed records are skipped and counted in ``rejected``; an
    out-of-order timestamp aborts the replay. ``#`` lines are comments.
    """

    def __init__(self, path, speed_factor: float = math.inf,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        if not speed_factor > 0:
            raise ValueError("speed_factor must be positive")
        self.path = Path(path)
        self.speed_factor = speed_factor
        self.rejected: Counter = Counter()
        self._sleep = sleep
        self._clock = clock

    def __iter__(self) -> Iterator[FeedEvent]:
        last_ts = None
        started = None
        first_ts = None
        with self.path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                try:
                    event = normalize(line)
                except FeedFormatError as exc:
                    self.rejected[type(exc).__name__] += 1
                    log.warning("%s:%d rejected: %s", self.path, lineno, exc)
                    continue
                if last_ts is not None and event.timestamp < last_ts:
                    raise ReplayError(f"{self.path}:{lineno} timestamps not sorted")
                last_ts = event.timestamp
                if math.isfinite(self.speed_factor):
                    if started is None:
                        started, first_ts = self._clock(), event.timestamp
                    due = started + (event.timestamp - first_ts) / 1000 / self.speed_factor
                    wait = due - self._clock()
                    if wait > 0:
                        self._sleep(wait)
                yield event

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())


def open_replay(path, speed_factor: float = math.inf, **kwargs) -> Replay:
    return Replay(path, speed_factor, **kwargs)


SnapshotProvider = Callable[[Sequence[int]], Mapping[tuple[int, IpPrefix], tuple[int, ...]]]


class Poller:
    """Rate-limited snapshot source that turns RIB diffs into events.

    ``snapshot_provider(vantages)`` returns the current best AS path for
    each ``(vantage, prefix)``; anything absent is treated as withdrawn.
    """

    def __init__(self, descriptor: SourceDescriptor):
        if descriptor.archetype is not Archetype.POLLING_SNAPSHOT:
            raise ValueError(f"{descriptor.source_id!r} is not a polling source")
        self.descriptor = descriptor
        self.last_tick: Optional[int] = None
        self.failures = 0
        self._previous: dict[tuple[int, IpPrefix], tuple[int, ...]] = {}

    def tick(self, now: int, snapshot_provider: SnapshotProvider) -> list[FeedEvent]:
        if self.last_tick is not None and now - self.last_tick < self.descriptor.poll_interval_ms:
            return []
        self.last_tick = now
        try:
            current = dict(snapshot_provider(self.descriptor.vantage_asns))
        except Exception as exc:  # provider outages are retried on the next tick
            self.failures += 1
            log.warning("snapshot provider for %s failed: %s", self.descriptor.source_id, exc)
            return []
        sid = self.descriptor.source_id
        events = []
        for key in sorted(current.keys() | self._previous.keys(), key=lambda k: (k[0], k[1])):
            vantage, prefix = key
            new, old = current.get(key), self._previous.get(key)
            if new == old:
                continue
            if new:
                events.append(FeedEvent(now, sid, vantage, EventKind.ANNOUNCE, prefix, tuple(new)))
            else:
                events.append(FeedEvent(now, sid, vantage, EventKind.WITHDRAW, prefix))
        self._previous = {k: tuple(v) for k, v in current.items() if v}
        return events


def poll_tick(poller: Poller, now: int, snapshot_provider: SnapshotProvider) -> list[FeedEvent]:
    return poller.tick(now, snapshot_provider)


class MuxStream:
    """Reorders events from concurrent sources within a time window.

    ``push`` may be called from several producer threads; ``pop_ready``
    and ``flush`` belong to the single consumer.
    """

    def __init__(self, reorder_window: int = DEFAULT_REORDER_WINDOW_MS):
        if reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")
        self.reorder_window = reorder_window
        self.late_count = 0
        self._heap: list = []
        self._seq = 0
        self._high_water: Optional[int] = None
        self._last_emitted: Optional[int] = None
        self._lock = threading.Lock()
        self._late: list[FeedEvent] = []

    def push(self, event: FeedEvent) -> None:
        with self._lock:
            if self._last_emitted is not None and event.timestamp < self._last_emitted:
                self.late_count += 1
                self._late.append(replace(event, late=True))
                return
            heapq.heappush(self._heap, (event.timestamp, self._seq, event))
            self._seq += 1
            if self._high_water is None or event.timestamp > self._high_water:
                self._high_water = event.timestamp

    def pop_ready(self) -> list[FeedEvent]:
        with self._lock:
            out, self._late = self._late, []
            if self._high_water is None:
                return out
            horizon = self._high_water - self.reorder_window
            while self._heap and self._heap[0][0] <= horizon:
                out.append(self._emit())
            return out

    def flush(self) -> list[FeedEvent]:
        with self._lock:
            out, self._late = self._late, []
            while self._heap:
                out.append(self._emit())
            return out

    def _emit(self) -> FeedEvent:
        ts, _, event = heapq.heappop(self._heap)
        self._last_emitted = ts
        return event


def mux(inputs: Sequence[Iterable[FeedEvent]], reorder_window: int = DEFAULT_REORDER_WINDOW_MS) -> Iterator[FeedEvent]:
    """Merge several event streams into one time-ordered stream.

    Arrival order is modeled by timestamp across inputs; within the
    window, disorder inside a single input is corrected too. Events that
    fall behind already-emitted output come out immediately, flagged late.
    """
    if not inputs:
        raise ValueError("mux needs at least one input")
    stream = MuxStream(reorder_window)
    for event in heapq.merge(*inputs, key=lambda e: e.timestamp):
        stream.push(event)
        yield from stream.pop_ready()
    yield from stream.flush()
