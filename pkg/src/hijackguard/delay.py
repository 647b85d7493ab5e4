"""Delay distributions sampled by key instead of by draw order.

A sample depends only on ``(seed, key)``. Two runs that differ in one
prefix's traffic therefore see identical delays for every other prefix,
which matched-seed comparisons rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass


def keyed_u64(seed: int, *key) -> int:
    digest = hashlib.blake2b(
        "|".join(map(str, (seed,) + key)).encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def derive_seed(master: int, *key) -> int:
    return keyed_u64(master, "seed", *key) & 0x7FFFFFFF


@dataclass(frozen=True)
class DelayModel:
    """``fixed <ms>`` or ``uniform <lo_ms> <hi_ms>`` (inclusive, integer ms)."""

    family: str = "uniform"
    low: int = 10
    high: int = 1000

    def __post_init__(self) -> None:
        if self.family not in ("fixed", "uniform"):
            raise ValueError(f"unknown delay family {self.family!r}")
        if self.family == "fixed":
            object.__setattr__(self, "high", self.low)
        if self.low < 0 or self.high < self.low:
            raise ValueError(f"bad delay bounds [{self.low}, {self.high}]")

    @classmethod
    def fixed(cls, ms: int) -> "DelayModel":
        return cls("fixed", ms, ms)

    @classmethod
    def parse(cls, tokens: list[str]) -> "DelayModel":
        if not tokens:
            raise ValueError("empty delay descriptor")
        family, params = tokens[0], tokens[1:]
        try:
            values = [int(float(p)) for p in params]
        except ValueError:
            raise ValueError(f"non-numeric delay parameters {params}") from None
        if family == "fixed" and len(values) == 1:
            return cls.fixed(values[0])
        if family == "uniform" and len(values) == 2:
            return cls("uniform", values[0], values[1])
        raise ValueError(f"bad delay descriptor {' '.join(tokens)!r}")

    def tokens(self) -> list[str]:
        if self.family == "fixed":
            return ["fixed", str(self.low)]
        return ["uniform", str(self.low), str(self.high)]

    def sample(self, seed: int, *key) -> int:
        if self.low == self.high:
            return self.low
        return self.low + keyed_u64(seed, *key) % (self.high - self.low + 1)

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2


DEFAULT_EDGE_DELAY = DelayModel("uniform", 10, 1000)
