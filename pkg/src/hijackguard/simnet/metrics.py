"""Infection measurements over traces and converged RIBs.

An AS is infected when longest-match over its selected routes sends
some address of the prefix toward the offending origin.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Optional, Union

from ..prefix import IpPrefix, forwarding_origins
from .engine import EventTrace, Route

Ribs = Mapping[int, Mapping[IpPrefix, Union[Route, int]]]


def _origin(value) -> int:
    return value.origin if isinstance(value, Route) else value


def is_infected(routes: Mapping[IpPrefix, Union[Route, int]], prefix: IpPrefix, offender: int) -> bool:
    origins = {p: _origin(v) for p, v in routes.items() if p.overlaps(prefix)}
    return offender in forwarding_origins(origins, prefix)


def infected_set(ribs: Ribs, prefix: IpPrefix, offender: int, among: Optional[Iterable[int]] = None) -> set[int]:
    asns = ribs.keys() if among is None else among
    return {a for a in asns if is_infected(ribs.get(a, {}), prefix, offender)}


def infected_fraction(source: Union[EventTrace, Ribs], prefix: Optional[IpPrefix] = None,
                      time: Optional[int] = None, *, offender: Optional[int] = None,
                      among: Optional[Iterable[int]] = None) -> float:
    """Fraction of ASes (or of ``among``) infected at ``time``.

    ``source`` is a trace, replayed up to ``time`` (default: the end), or
    a converged RIB mapping, for which ``time`` is ignored.
    """
    if isinstance(source, EventTrace):
        prefix = prefix or source.hijacked_prefix
        offender = source.hijacker_asn if offender is None else offender
        if time is not None and time < 0:
            raise ValueError("time precedes the start of the trace")
        ribs = ribs_at(source, time)
        population = list(source.asns if among is None else among)
    else:
        ribs = source
        population = list(ribs.keys() if among is None else among)
    if prefix is None or offender is None:
        raise ValueError("need both a prefix and an offending origin")
    if not population:
        return 0.0
    return len(infected_set(ribs, prefix, offender, population)) / len(population)


def ribs_at(trace: EventTrace, time: Optional[int] = None) -> dict[int, dict[IpPrefix, Route]]:
    ribs: dict[int, dict[IpPrefix, Route]] = {a: {} for a in trace.asns}
    for t, asn, prefix, route in trace.best_changes:
        if time is not None and t > time:
            break
        if route is None:
            ribs[asn].pop(prefix, None)
        else:
            ribs[asn][prefix] = route
    return ribs


def infection_series(trace: EventTrace, prefix: Optional[IpPrefix] = None, offender: Optional[int] = None,
                     among: Optional[Iterable[int]] = None, start: int = 0) -> list[tuple[int, float]]:
    """Step function ``[(time, fraction), ...]`` from ``start`` on, one point per change."""
    prefix = prefix or trace.hijacked_prefix
    offender = trace.hijacker_asn if offender is None else offender
    population = set(trace.asns if among is None else among)
    if not population or prefix is None or offender is None:
        return [(start, 0.0)]
    ribs: dict[int, dict[IpPrefix, Route]] = {a: {} for a in trace.asns}
    infected: set[int] = set()
    points: list[tuple[int, float]] = []
    n = len(population)
    i = 0
    changes = trace.best_changes
    while i < len(changes) and changes[i][0] <= start:
        _, asn, p, route = changes[i]
        _apply(ribs, asn, p, route)
        i += 1
    infected = {a for a in population if is_infected(ribs[a], prefix, offender)}
    points.append((start, len(infected) / n))
    while i < len(changes):
        t = changes[i][0]
        touched = set()
        while i < len(changes) and changes[i][0] == t:
            _, asn, p, route = changes[i]
            if p.overlaps(prefix):
                _apply(ribs, asn, p, route)
                touched.add(asn)
            i += 1
        changed = False
        for asn in touched & population:
            now = is_infected(ribs[asn], prefix, offender)
            if now != (asn in infected):
                changed = True
                (infected.add if now else infected.discard)(asn)
        if changed:
            points.append((t, len(infected) / n))
    return points


def _apply(ribs, asn, prefix, route) -> None:
    if route is None:
        ribs[asn].pop(prefix, None)
    else:
        ribs[asn][prefix] = route


def recovery_time(series: list[tuple[int, float]], after: int) -> Optional[int]:
    """First time at or after ``after`` from which the series stays at zero."""
    if not series or series[-1][1] != 0.0:
        return None
    t = None
    for time, value in reversed(series):
        if value != 0.0:
            break
        t = time
    return max(t, after) if t is not None else None
