"""IPv4 CIDR arithmetic, a binary prefix trie, and one-bit de-aggregation."""

from __future__ import annotations

import enum
import ipaddress
import re
from dataclasses import dataclass
from typing import Generic, Iterable, Iterator, Mapping, Optional, TypeVar

ADDRESS_BITS = 32
DEFAULT_FLOOR = 24

_PREFIX_RE = re.compile(r"^(\d{1,3}(?:\.\d{1,3}){3})/(\d{1,2})$")

V = TypeVar("V")


class PrefixError(ValueError):
    """Raised for malformed or non-canonical prefix text."""


@dataclass(frozen=True, order=True)
class IpPrefix:
    """A canonical IPv4 prefix: ``base`` carries no bits below ``length``."""

    base: int
    length: int

    def __post_init__(self) -> None:
        if not 0 <= self.length <= ADDRESS_BITS:
            raise PrefixError(f"prefix length {self.length} outside [0, 32]")
        if not 0 <= self.base < (1 << ADDRESS_BITS):
            raise PrefixError(f"address {self.base} outside the IPv4 range")
        if self.base & host_mask(self.length):
            raise PrefixError(f"host bits set in {_dotted(self.base)}/{self.length}")

    @classmethod
    def parse(cls, text: str) -> "IpPrefix":
        return parse_prefix(text)

    def __str__(self) -> str:
        return f"{_dotted(self.base)}/{self.length}"

    @property
    def last(self) -> int:
        """Highest address inside the prefix."""
        return self.base | host_mask(self.length)

    @property
    def size(self) -> int:
        return 1 << (ADDRESS_BITS - self.length)

    def contains(self, other: "IpPrefix") -> bool:
        return contains(self, other)

    def overlaps(self, other: "IpPrefix") -> bool:
        return contains(self, other) or contains(other, self)

    def halves(self) -> tuple["IpPrefix", "IpPrefix"]:
        if self.length >= ADDRESS_BITS:
            raise PrefixError(f"{self} cannot be split further")
        child = self.length + 1
        return IpPrefix(self.base, child), IpPrefix(self.base | (1 << (ADDRESS_BITS - child)), child)

    def bit(self, index: int) -> int:
        """Bit ``index`` counted from the most significant end (0-based)."""
        return (self.base >> (ADDRESS_BITS - 1 - index)) & 1


def host_mask(length: int) -> int:
    return (1 << (ADDRESS_BITS - length)) - 1


def _dotted(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def parse_prefix(text: str) -> IpPrefix:
    """Parse ``A.B.C.D/L``. Host bits are rejected, never masked off."""
    match = _PREFIX_RE.match(text.strip())
    if match is None:
        raise PrefixError(f"malformed prefix {text!r}")
    address, length_text = match.groups()
    length = int(length_text)
    if length > ADDRESS_BITS:
        raise PrefixError(f"prefix length {length} exceeds 32 in {text!r}")
    try:
        base = int(ipaddress.IPv4Address(address))
    except ipaddress.AddressValueError as exc:
        raise PrefixError(f"malformed address in {text!r}: {exc}") from None
    if base & host_mask(length):
        raise PrefixError(f"host bits set in {text!r}")
    return IpPrefix(base, length)


def format_prefix(prefix: IpPrefix) -> str:
    return str(prefix)


def contains(outer: IpPrefix, inner: IpPrefix) -> bool:
    if outer.length > inner.length:
        return False
    shift = ADDRESS_BITS - outer.length
    return (outer.base >> shift) == (inner.base >> shift)


class _Node:
    __slots__ = ("children", "value", "occupied")

    def __init__(self) -> None:
        self.children: list[Optional[_Node]] = [None, None]
        self.value = None
        self.occupied = False


class PrefixTrie(Generic[V]):
    """Binary radix trie keyed by prefix bits.

    Single writer, many readers; callers serialize writes.
    """

    def __init__(self, items: Optional[Iterable[tuple[IpPrefix, V]]] = None) -> None:
        self._root = _Node()
        self._size = 0
        if items is not None:
            for prefix, value in items:
                self.insert(prefix, value)

    def __len__(self) -> int:
        return self._size

    def __contains__(self, prefix: IpPrefix) -> bool:
        node = self._find(prefix)
        return node is not None and node.occupied

    def __iter__(self) -> Iterator[IpPrefix]:
        for prefix, _ in self.items():
            yield prefix

    def insert(self, prefix: IpPrefix, value: V) -> None:
        node = self._root
        for i in range(prefix.length):
            b = prefix.bit(i)
            child = node.children[b]
            if child is None:
                child = node.children[b] = _Node()
            node = child
        if not node.occupied:
            self._size += 1
        node.value = value
        node.occupied = True

    def get(self, prefix: IpPrefix, default: Optional[V] = None) -> Optional[V]:
        node = self._find(prefix)
        if node is None or not node.occupied:
            return default
        return node.value

    def __getitem__(self, prefix: IpPrefix) -> V:
        node = self._find(prefix)
        if node is None or not node.occupied:
            raise KeyError(prefix)
        return node.value

    def remove(self, prefix: IpPrefix) -> V:
        node = self._find(prefix)
        if node is None or not node.occupied:
            raise KeyError(prefix)
        value = node.value
        node.value = None
        node.occupied = False
        self._size -= 1
        return value

    def _find(self, prefix: IpPrefix) -> Optional[_Node]:
        node = self._root
        for i in range(prefix.length):
            node = node.children[prefix.bit(i)]
            if node is None:
                return None
        return node

    def longest_match(self, prefix: IpPrefix) -> Optional[tuple[IpPrefix, V]]:
        """Longest stored prefix that contains ``prefix``, with its value."""
        node = self._root
        best: Optional[tuple[int, V]] = (0, node.value) if node.occupied else None
        for i in range(prefix.length):
            node = node.children[prefix.bit(i)]
            if node is None:
                break
            if node.occupied:
                best = (i + 1, node.value)
        if best is None:
            return None
        length, value = best
        return IpPrefix(prefix.base & ~host_mask(length) & 0xFFFFFFFF, length), value

    def covering(self, prefix: IpPrefix) -> list[tuple[IpPrefix, V]]:
        """Every stored prefix containing ``prefix``, shortest first."""
        out = []
        node = self._root
        if node.occupied:
            out.append((IpPrefix(0, 0), node.value))
        for i in range(prefix.length):
            node = node.children[prefix.bit(i)]
            if node is None:
                break
            if node.occupied:
                out.append((IpPrefix(prefix.base & ~host_mask(i + 1) & 0xFFFFFFFF, i + 1), node.value))
        return out

    def items(self, within: Optional[IpPrefix] = None) -> Iterator[tuple[IpPrefix, V]]:
        """Stored entries, optionally restricted to those inside ``within``."""
        start = within or IpPrefix(0, 0)
        node = self._find(start)
        if node is None:
            return
        stack = [(node, start.base, start.length)]
        while stack:
            node, base, length = stack.pop()
            if node.occupied:
                yield IpPrefix(base, length), node.value
            for b in (1, 0):
                child = node.children[b]
                if child is not None:
                    stack.append((child, base | (b << (ADDRESS_BITS - length - 1)), length + 1))


class OutcomeKind(enum.Enum):
    SPLIT = "split"
    FILTERED_FLOOR = "filtered-floor"


@dataclass(frozen=True)
class DeaggregationOutcome:
    kind: OutcomeKind
    prefixes: tuple[IpPrefix, ...] = ()

    @property
    def is_split(self) -> bool:
        return self.kind is OutcomeKind.SPLIT


def deaggregate(prefix: IpPrefix, floor_length: int = DEFAULT_FLOOR) -> DeaggregationOutcome:
    """Split ``prefix`` into its two halves unless it already sits at the floor.

    Only a single level is produced: two announcements more specific by
    one bit. Anything at or beyond ``floor_length`` would be filtered by
    transit routers, so no announcement is generated.
    """
    if not 1 <= floor_length <= ADDRESS_BITS:
        raise PrefixError(f"floor length {floor_length} outside [1, 32]")
    if prefix.length >= floor_length:
        return DeaggregationOutcome(OutcomeKind.FILTERED_FLOOR)
    return DeaggregationOutcome(OutcomeKind.SPLIT, prefix.halves())


def forwarding_origins(routes: Mapping[IpPrefix, V], target: IpPrefix) -> set[Optional[V]]:
    """Values reached by longest-match forwarding for the addresses in ``target``.

    ``None`` is included when part of ``target`` has no covering route.
    """
    relevant = [(p, v) for p, v in routes.items() if p.overlaps(target)]
    inherited = None
    inherited_len = -1
    for p, v in relevant:
        if p.length < target.length and p.length > inherited_len and contains(p, target):
            inherited, inherited_len = v, p.length
    return _walk(target, inherited, [(p, v) for p, v in relevant if contains(target, p)])


def _walk(region: IpPrefix, inherited, candidates) -> set:
    best = inherited
    inside = []
    for p, v in candidates:
        if p == region:
            best = v
        else:
            inside.append((p, v))
    if not inside:
        return {best}
    out = set()
    for half in region.halves():
        out |= _walk(half, best, [(p, v) for p, v in inside if contains(half, p)])
    return out
