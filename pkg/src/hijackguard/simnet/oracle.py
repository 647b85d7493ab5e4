"""Timing-free reference computation of converged routing.

Deliberately shares no routing code with the event-driven engine: each
synchronous round, every AS re-selects from what its neighbors selected
in the previous round, until nothing changes.
"""

from __future__ import annotations

from typing import Iterable, Optional

from ..prefix import IpPrefix
from .engine import Route
from .topology import Rel, Topology


class OracleDivergence(RuntimeError):
    pass


_PREF = {Rel.CUSTOMER: 2, Rel.PEER: 1, Rel.PROVIDER: 0}


def fixpoint_oracle(topology: Topology, announcements: Iterable[tuple[int, IpPrefix]],
                    floor: int = 24, max_rounds: Optional[int] = None) -> dict[int, dict[IpPrefix, Route]]:
    """Converged best route per AS and prefix for a static set of originations."""
    by_prefix: dict[IpPrefix, set[int]] = {}
    for asn, prefix in announcements:
        if asn not in topology.nodes:
            raise ValueError(f"AS{asn} is not in the topology")
        by_prefix.setdefault(prefix, set()).add(asn)
    n = len(topology.nodes)
    bound = max_rounds if max_rounds is not None else n * max(1, len(by_prefix)) * (n + 1)
    result: dict[int, dict[IpPrefix, Route]] = {asn: {} for asn in topology.nodes}
    for prefix, origins in sorted(by_prefix.items()):
        for asn, route in _converge(topology, prefix, origins, floor, bound).items():
            result[asn][prefix] = route
    return result


def _converge(topology: Topology, prefix: IpPrefix, origins: set[int], floor: int, bound: int):
    # selected[asn] = (path as received, learned_from); origins hold ((asn,), None)
    selected: dict[int, tuple[tuple[int, ...], Optional[int]]] = {o: ((o,), None) for o in origins}
    if prefix.length > floor:
        return {o: Route(prefix, (o,), None) for o in origins}
    nodes = sorted(topology.nodes)
    for _ in range(bound):
        nxt = {}
        for asn in nodes:
            if asn in origins:
                nxt[asn] = ((asn,), None)
                continue
            choice = None
            choice_key = None
            for nbr, rel in topology.rel[asn].items():
                offer = _offer(topology, nbr, asn, selected.get(nbr))
                if offer is None:
                    continue
                key = (_PREF[rel], -len(offer), -nbr)
                if choice_key is None or key > choice_key:
                    choice_key, choice = key, (offer, nbr)
            if choice is not None:
                nxt[asn] = choice
        if nxt == selected:
            return {a: Route(prefix, p, lf) for a, (p, lf) in selected.items()}
        selected = nxt
    raise OracleDivergence(f"no fixpoint for {prefix} within {bound} rounds")


def _offer(topology: Topology, sender: int, receiver: int, sel):
    """Path ``sender`` advertises to ``receiver`` under valley-free export, or None."""
    if sel is None:
        return None
    path, learned_from = sel
    if learned_from is None:
        out = path
        customer_route = True
    else:
        out = (sender,) + path
        customer_route = topology.rel[sender][learned_from] is Rel.CUSTOMER
    if not customer_route and topology.rel[sender][receiver] is not Rel.CUSTOMER:
        return None
    if receiver in out:
        return None
    return out
