"""Hijack experiment scenarios.

Line format::

    legitimate <asn> <prefix> [<origin>...]
    hijacker <asn> <prefix>
    hijack_at <ms|auto>
    mitigation <immediate|defer <ms>|off>
    floor <len>
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..prefix import DEFAULT_FLOOR, IpPrefix, PrefixError, contains, parse_prefix


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class MitigationPolicy:
    mode: str = "immediate"   # immediate | defer | off
    defer_ms: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("immediate", "defer", "off"):
            raise ScenarioError(f"unknown mitigation mode {self.mode!r}")
        if self.defer_ms < 0:
            raise ScenarioError("mitigation deferral must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.mode != "off"

    @property
    def delay_ms(self) -> int:
        return self.defer_ms if self.mode == "defer" else 0

    def label(self) -> str:
        return f"defer:{self.defer_ms}" if self.mode == "defer" else self.mode

    @classmethod
    def from_label(cls, text: str) -> "MitigationPolicy":
        if text.startswith("defer:"):
            return cls("defer", int(text.split(":", 1)[1]))
        return cls(text)


@dataclass(frozen=True)
class Scenario:
    legitimate_asn: int
    legitimate_prefix: IpPrefix
    legitimate_origins: tuple[int, ...]
    hijacker_asn: Optional[int] = None
    hijacked_prefix: Optional[IpPrefix] = None
    hijack_at: Optional[int] = None   # None: once routing is quiescent
    mitigation: MitigationPolicy = MitigationPolicy()
    floor: int = DEFAULT_FLOOR

    def __post_init__(self) -> None:
        if (self.hijacker_asn is None) != (self.hijacked_prefix is None):
            raise ScenarioError("hijacker needs both an ASN and a prefix")
        if self.hijacked_prefix is not None and not contains(self.legitimate_prefix, self.hijacked_prefix):
            raise ScenarioError(
                f"hijacked {self.hijacked_prefix} is outside owned {self.legitimate_prefix}")
        if not self.legitimate_origins:
            raise ScenarioError("no legitimate origins")
        if self.hijacker_asn is not None and self.hijacker_asn in self.legitimate_origins:
            raise ScenarioError("hijacker is listed as a legitimate origin")

    @property
    def attack(self) -> Optional[str]:
        if self.hijacked_prefix is None:
            return None
        return "exact" if self.hijacked_prefix == self.legitimate_prefix else "subprefix"

    @property
    def mitigation_target(self) -> Optional[IpPrefix]:
        # exact hijacks split the owned prefix, sub-prefix hijacks the announced one
        return self.hijacked_prefix

    def asns(self) -> set[int]:
        out = {self.legitimate_asn}
        if self.hijacker_asn is not None:
            out.add(self.hijacker_asn)
        return out

    def format(self) -> str:
        lines = [f"legitimate {self.legitimate_asn} {self.legitimate_prefix} "
                 + " ".join(map(str, self.legitimate_origins))]
        if self.hijacker_asn is not None:
            lines.append(f"hijacker {self.hijacker_asn} {self.hijacked_prefix}")
        lines.append(f"hijack_at {'auto' if self.hijack_at is None else self.hijack_at}")
        m = self.mitigation
        lines.append("mitigation " + (f"defer {m.defer_ms}" if m.mode == "defer" else m.mode))
        lines.append(f"floor {self.floor}")
        return "\n".join(lines) + "\n"


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    fields: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        where = f"{source}:{lineno}"
        try:
            head = words[0]
            if head == "legitimate" and len(words) >= 3:
                fields["legitimate_asn"] = int(words[1])
                fields["legitimate_prefix"] = parse_prefix(words[2])
                origins = tuple(int(w) for w in words[3:]) or (int(words[1]),)
                fields["legitimate_origins"] = origins
            elif head == "hijacker" and len(words) == 3:
                fields["hijacker_asn"] = int(words[1])
                fields["hijacked_prefix"] = parse_prefix(words[2])
            elif head == "hijack_at" and len(words) == 2:
                fields["hijack_at"] = None if words[1] == "auto" else int(words[1])
            elif head == "mitigation" and len(words) in (2, 3):
                if words[1] == "defer":
                    fields["mitigation"] = MitigationPolicy("defer", int(words[2]))
                elif len(words) == 2:
                    fields["mitigation"] = MitigationPolicy(words[1])
                else:
                    raise ScenarioError(f"bad mitigation line {line!r}")
            elif head == "floor" and len(words) == 2:
                fields["floor"] = int(words[1])
            else:
                raise ScenarioError(f"unrecognized line {line!r}")
        except ScenarioError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        except (ValueError, IndexError, PrefixError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None
    if "legitimate_asn" not in fields:
        raise ScenarioError(f"{source}: missing 'legitimate' line")
    try:
        return Scenario(**fields)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), source=str(path))
