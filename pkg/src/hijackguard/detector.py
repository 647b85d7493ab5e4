"""Origin-based hijack detection against a table of owned prefixes."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .feeds import FeedEvent
from .prefix import IpPrefix, PrefixError, PrefixTrie, parse_prefix

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class GroundTruthError(ValueError):
    """An alarm predates the hijack it is measured against."""


class OwnedPrefixTable:
    """Owned prefixes mapped to their legitimate origin ASNs.

    Origins keep their configured order; the first one is the primary
    origin used for mitigation announcements.
    """

    def __init__(self, entries: Optional[Iterable[tuple[IpPrefix, Iterable[int]]]] = None):
        self._trie: PrefixTrie[tuple[int, ...]] = PrefixTrie()
        for prefix, origins in entries or ():
            self.add(prefix, origins)

    def add(self, prefix: IpPrefix, origins: Iterable[int]) -> None:
        origins = tuple(origins)
        if not origins:
            raise ConfigError(f"{prefix} has no legitimate origins")
        merged = list(self._trie.get(prefix, ()))
        merged += [o for o in origins if o not in merged]
        self._trie.insert(prefix, tuple(merged))

    def __len__(self) -> int:
        return len(self._trie)

    def __contains__(self, prefix: IpPrefix) -> bool:
        return prefix in self._trie

    def origins(self, prefix: IpPrefix) -> tuple[int, ...]:
        return self._trie[prefix]

    def primary_origin(self, prefix: IpPrefix) -> int:
        return self._trie[prefix][0]

    def lookup(self, prefix: IpPrefix) -> Optional[tuple[IpPrefix, tuple[int, ...]]]:
        return self._trie.longest_match(prefix)

    def items(self):
        return self._trie.items()

    def format(self) -> str:
        return "".join(f"prefix {p} origins {','.join(map(str, o))}\n" for p, o in self.items())


def load_config(path) -> OwnedPrefixTable:
    """Read ``prefix <CIDR> origins <asn>[,<asn>...]`` lines; ``#`` starts a comment."""
    return parse_config(Path(path).read_text(), source=str(path))


def parse_config(text: str, source: str = "<config>") -> OwnedPrefixTable:
    table = OwnedPrefixTable()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "prefix" or parts[2] != "origins":
            raise ConfigError(f"{source}:{lineno}: expected 'prefix <CIDR> origins <asn>[,<asn>...]'")
        try:
            prefix = parse_prefix(parts[1])
            origins = [int(a) for a in parts[3].split(",") if a]
        except (PrefixError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        table.add(prefix, origins)
    if not len(table):
        raise ConfigError(f"{source}: no prefix entries")
    return table


class Verdict(enum.Enum):
    IRRELEVANT = "irrelevant"
    LEGITIMATE = "legitimate"
    EXACT_HIJACK = "exact"
    SUBPREFIX_HIJACK = "subprefix"

    @property
    def is_hijack(self) -> bool:
        return self in (Verdict.EXACT_HIJACK, Verdict.SUBPREFIX_HIJACK)


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    owned_prefix: Optional[IpPrefix] = None


IRRELEVANT = Classification(Verdict.IRRELEVANT)


def classify(event: FeedEvent, table: OwnedPrefixTable) -> Classification:
    if not event.is_announce:
        return IRRELEVANT
    match = table.lookup(event.prefix)
    if match is None:
        return IRRELEVANT
    owned, origins = match
    if event.origin in origins:
        return Classification(Verdict.LEGITIMATE, owned)
    if owned == event.prefix:
        return Classification(Verdict.EXACT_HIJACK, owned)
    return Classification(Verdict.SUBPREFIX_HIJACK, owned)


@dataclass(frozen=True)
class HijackAlarm:
    owned_prefix: IpPrefix
    announced_prefix: IpPrefix
    offending_origin: int
    kind: Verdict
    first_seen: int
    first_source: str
    first_vantage: int
    witness_event: FeedEvent

    @property
    def key(self) -> tuple[IpPrefix, int]:
        return self.announced_prefix, self.offending_origin

    def format(self) -> str:
        return (f"{self.first_seen} ALARM {self.kind.value} {self.announced_prefix} "
                f"{self.offending_origin} {self.first_source} {self.first_vantage}")


class Detector:
    """Consumes the merged feed and raises one alarm per (prefix, offender).

    Besides alarms it keeps an infection ledger: for each vantage and
    announced prefix inside owned space, the origin last seen.
    """

    def __init__(self, table: OwnedPrefixTable, alarm_log=None):
        self.table = table
        self.alarms: dict[tuple[IpPrefix, int], HijackAlarm] = {}
        self.cleared: list[HijackAlarm] = []
        self.ledger: dict[tuple[int, IpPrefix], int] = {}
        self.first_seen_by_source: dict[tuple[IpPrefix, int], dict[str, int]] = {}
        self.processed = 0
        self._alarm_log = Path(alarm_log) if alarm_log else None

    def process(self, event: FeedEvent) -> Optional[HijackAlarm]:
        self.processed += 1
        if not event.is_announce:
            self.ledger.pop((event.vantage_asn, event.prefix), None)
            return None
        verdict = classify(event, self.table)
        if verdict.verdict is Verdict.IRRELEVANT:
            return None
        self.ledger[(event.vantage_asn, event.prefix)] = event.origin
        if not verdict.verdict.is_hijack:
            return None
        key = (event.prefix, event.origin)
        per_source = self.first_seen_by_source.setdefault(key, {})
        if event.source_id not in per_source:
            per_source[event.source_id] = event.timestamp
        if key in self.alarms:
            return None
        alarm = HijackAlarm(
            owned_prefix=verdict.owned_prefix,
            announced_prefix=event.prefix,
            offending_origin=event.origin,
            kind=verdict.verdict,
            first_seen=event.timestamp,
            first_source=event.source_id,
            first_vantage=event.vantage_asn,
            witness_event=event,
        )
        self.alarms[key] = alarm
        log.info("hijack: %s", alarm.format())
        if self._alarm_log is not None:
            with self._alarm_log.open("a") as fh:
                fh.write(alarm.format() + "\n")
        return alarm

    def clear(self, key: tuple[IpPrefix, int]) -> HijackAlarm:
        alarm = self.alarms.pop(key)
        self.first_seen_by_source.pop(key, None)
        self.cleared.append(alarm)
        return alarm

    def infected_vantages(self, alarm: HijackAlarm) -> set[int]:
        return {v for (v, p), o in self.ledger.items()
                if p == alarm.announced_prefix and o == alarm.offending_origin}


def detection_delay(alarm: HijackAlarm, hijack_start: int) -> int:
    if alarm.first_seen < hijack_start:
        raise GroundTruthError(f"alarm at {alarm.first_seen} predates hijack start {hijack_start}")
    return alarm.first_seen - hijack_start


def per_source_delays(detector: Detector, alarm: HijackAlarm, hijack_start: int) -> dict[str, int]:
    firsts = detector.first_seen_by_source.get(alarm.key, {})
    out = {}
    for source, ts in firsts.items():
        if ts < hijack_start:
            raise GroundTruthError(f"{source} saw the hijack at {ts}, before {hijack_start}")
        out[source] = ts - hijack_start
    return out
