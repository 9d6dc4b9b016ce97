"""Prefix/ASN types, VRP indexing and route origin validation."""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from lov.diagnostics import Diagnostic, csv_rows

MAX_LEN = {4: 32, 6: 128}


@dataclass(frozen=True, order=True)
class Prefix:
    version: int
    value: int
    length: int

    def __post_init__(self):
        width = MAX_LEN.get(self.version)
        if width is None:
            raise ValueError(f"bad address family {self.version}")
        if not 0 <= self.length <= width:
            raise ValueError(f"prefix length {self.length} out of range")
        if self.value >> (width - self.length) << (width - self.length) != self.value:
            raise ValueError("host bits set")

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        try:
            net = ipaddress.ip_network(text.strip(), strict=True)
        except ValueError as exc:
            raise ValueError(f"invalid prefix {text!r}: {exc}") from None
        return cls(net.version, int(net.network_address), net.prefixlen)

    @property
    def width(self) -> int:
        return MAX_LEN[self.version]

    def bits(self) -> Iterator[int]:
        """Yield the network bits, most significant first."""
        w = self.width
        for i in range(self.length):
            yield (self.value >> (w - 1 - i)) & 1

    def covers(self, other: "Prefix") -> bool:
        if self.version != other.version or self.length > other.length:
            return False
        shift = self.width - self.length
        return (other.value >> shift) == (self.value >> shift)

    def contains_address(self, version: int, address: int) -> bool:
        if version != self.version:
            return False
        shift = self.width - self.length
        return (address >> shift) == (self.value >> shift)

    def __str__(self) -> str:
        if self.version == 4:
            addr = ipaddress.IPv4Address(self.value)
        else:
            addr = ipaddress.IPv6Address(self.value)
        return f"{addr}/{self.length}"


def parse_asn(text) -> int:
    """Accept ``AS64512``, ``as64512`` or a bare integer."""
    if isinstance(text, bool):
        raise ValueError(f"invalid ASN {text!r}")
    if isinstance(text, int):
        value = text
    else:
        s = str(text).strip()
        if s[:2].upper() == "AS":
            s = s[2:]
        if not s.isdigit():
            raise ValueError(f"invalid ASN {text!r}")
        value = int(s)
    if not 0 <= value <= 0xFFFFFFFF:
        raise ValueError(f"ASN {value} out of 32-bit range")
    return value


# IANA special-purpose AS numbers (RFC 6996, 7300, 5398, 6793, 7607).
_BOGON_SINGLE = frozenset({0, 23456, 65535, 4294967295})
_BOGON_RANGES = (
    (64496, 64511),
    (64512, 65534),
    (65536, 65551),
    (65552, 131071),
    (4200000000, 4294967294),
)


def is_bogon_asn(asn: int) -> bool:
    if asn in _BOGON_SINGLE:
        return True
    return any(lo <= asn <= hi for lo, hi in _BOGON_RANGES)


@dataclass(frozen=True, order=True)
class Vrp:
    asn: int
    prefix: Prefix
    max_length: int

    def __post_init__(self):
        if not self.prefix.length <= self.max_length <= self.prefix.width:
            raise ValueError(
                f"max length {self.max_length} outside "
                f"[{self.prefix.length}, {self.prefix.width}]"
            )


@dataclass(frozen=True)
class Announcement:
    prefix: Prefix
    as_path: tuple[int, ...]
    timestamp: int = 0
    peer: int | None = None

    def __post_init__(self):
        if not self.as_path:
            raise ValueError("empty AS path")

    @property
    def origin(self) -> int:
        return self.as_path[-1]

    @property
    def key(self) -> "RouteKey":
        return RouteKey(self.origin, self.prefix)


@dataclass(frozen=True, order=True)
class RouteKey:
    origin: int
    prefix: Prefix

    def __str__(self) -> str:
        return f"AS{self.origin} {self.prefix}"


class Status(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RpkiStatus:
    status: Status
    matched_vrps: tuple[Vrp, ...] = field(default=())

    def __post_init__(self):
        if (self.status is Status.UNKNOWN) != (not self.matched_vrps):
            raise ValueError("Unknown status iff no covering VRPs")


class PrefixTrie:
    """Binary trie keyed on prefix bits, one root per address family.

    Each node is a list ``[child0, child1, items]``; items is a list or None.
    """

    def __init__(self):
        self._roots = {4: [None, None, None], 6: [None, None, None]}
        self._size = 0

    def __len__(self):
        return self._size

    def insert(self, prefix: Prefix, item) -> None:
        node = self._roots[prefix.version]
        for bit in prefix.bits():
            child = node[bit]
            if child is None:
                child = node[bit] = [None, None, None]
            node = child
        if node[2] is None:
            node[2] = []
        node[2].append(item)
        self._size += 1

    def _walk(self, version: int, value: int, length: int):
        node = self._roots[version]
        width = MAX_LEN[version]
        if node[2]:
            yield 0, node[2]
        for depth in range(length):
            node = node[(value >> (width - 1 - depth)) & 1]
            if node is None:
                return
            if node[2]:
                yield depth + 1, node[2]

    def covering(self, prefix: Prefix) -> list:
        """Items stored at prefixes equal to or less specific than ``prefix``,
        most specific first."""
        out = []
        for _, items in self._walk(prefix.version, prefix.value, prefix.length):
            out.append(items)
        result = []
        for items in reversed(out):
            result.extend(items)
        return result

    def longest_match(self, version: int, address: int):
        """Items at the longest prefix containing ``address``, or None."""
        best = None
        for _, items in self._walk(version, address, MAX_LEN[version]):
            best = items
        return best

    def exact(self, prefix: Prefix) -> list:
        node = self._roots[prefix.version]
        for bit in prefix.bits():
            node = node[bit]
            if node is None:
                return []
        return list(node[2] or ())


class RoaIndex:
    """Immutable covering-prefix index over a deduplicated VRP set."""

    def __init__(self, vrps: Iterable[Vrp] = ()):
        unique = sorted(set(vrps))
        self._vrps = tuple(unique)
        self._trie = PrefixTrie()
        self._by_asn: dict[int, list[Vrp]] = {}
        for v in unique:
            self._trie.insert(v.prefix, v)
            self._by_asn.setdefault(v.asn, []).append(v)

    def __len__(self):
        return len(self._vrps)

    def __iter__(self):
        return iter(self._vrps)

    @property
    def vrps(self) -> tuple[Vrp, ...]:
        return self._vrps

    def covering(self, prefix: Prefix) -> list[Vrp]:
        found = self._trie.covering(prefix)
        # stable order inside one prefix node: by (asn, max_length)
        found.sort(key=lambda v: (-v.prefix.length, v.asn, v.max_length))
        return found

    def for_asn(self, asn: int) -> tuple[Vrp, ...]:
        return tuple(self._by_asn.get(asn, ()))

    def validate_route(self, origin: int, prefix: Prefix) -> RpkiStatus:
        matched = self.covering(prefix)
        if not matched:
            return RpkiStatus(Status.UNKNOWN)
        for v in matched:
            if v.asn == origin and v.max_length >= prefix.length:
                return RpkiStatus(Status.VALID, tuple(matched))
        return RpkiStatus(Status.INVALID, tuple(matched))

    def validate(self, ann: Announcement) -> RpkiStatus:
        return self.validate_route(ann.origin, ann.prefix)


def build_roa_index(vrps: Iterable[Vrp]) -> RoaIndex:
    return RoaIndex(vrps)


def covering_vrps(index: RoaIndex, prefix: Prefix) -> list[Vrp]:
    return index.covering(prefix)


def validate(index: RoaIndex, ann: Announcement) -> RpkiStatus:
    return index.validate(ann)


# -- file formats ------------------------------------------------------------

VRP_HEADER = ["ASN", "IP Prefix", "Max Length", "Trust Anchor"]


def parse_vrp_csv(text: str) -> tuple[list[Vrp], list[Diagnostic]]:
    """Parse a relying-party CSV export. Bad rows are skipped and reported."""
    vrps: list[Vrp] = []
    diags: list[Diagnostic] = []
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    for lineno, row, err in csv_rows(text):
        if err is not None:
            diags.append(Diagnostic(lineno, err))
            continue
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if lineno == 1 and row[0].strip().upper() == "ASN":
            continue
        if len(row) < 3:
            diags.append(Diagnostic(lineno, "expected at least 3 columns"))
            continue
        try:
            asn = parse_asn(row[0])
            prefix = Prefix.parse(row[1])
            max_len = int(row[2].strip()) if row[2].strip() else prefix.length
            vrps.append(Vrp(asn, prefix, max_len))
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
    return vrps, diags


def dump_vrp_csv(vrps: Iterable[Vrp], trust_anchor: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VRP_HEADER)
    for v in sorted(set(vrps)):
        w.writerow([v.asn, str(v.prefix), v.max_length, trust_anchor])
    return buf.getvalue()


def parse_announcement(obj: dict) -> Announcement:
    path = obj["as_path"]
    if not isinstance(path, list) or not path:
        raise ValueError("as_path must be a non-empty array")
    hops = []
    for hop in path:
        if isinstance(hop, (list, dict)):
            raise ValueError("AS_SET/confed segments are not supported")
        hops.append(parse_asn(hop))
    peer = obj.get("peer_asn")
    return Announcement(
        prefix=Prefix.parse(obj["prefix"]),
        as_path=tuple(hops),
        timestamp=int(obj["ts"]),
        peer=parse_asn(peer) if peer is not None else None,
    )


def iter_announcements(
    lines: Iterable[str],
) -> Iterator[Announcement | Diagnostic]:
    """Yield announcements from JSON lines; malformed lines yield a Diagnostic."""
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            yield parse_announcement(obj)
        except (ValueError, KeyError, TypeError) as exc:
            yield Diagnostic(lineno, f"{type(exc).__name__}: {exc}")


def dump_announcement(ann: Announcement) -> str:
    return json.dumps(
        {
            "ts": ann.timestamp,
            "peer_asn": ann.peer,
            "prefix": str(ann.prefix),
            "as_path": list(ann.as_path),
        },
        separators=(",", ":"),
    )


BogonFilter = Callable[[int], bool]
