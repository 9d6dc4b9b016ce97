"""Parsers and a dated snapshot store for the external datasets.

Every parser is total: it returns ``(artifact, diagnostics)`` and never raises
on bad input.  Each format has a matching ``dump_*`` so that
parse -> dump -> parse is a fixed point.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from lov.diagnostics import Diagnostic, csv_rows
from lov.rov import Prefix, PrefixTrie, RoaIndex, dump_vrp_csv, parse_asn, parse_vrp_csv

log = logging.getLogger(__name__)


def _decode(data) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


# -- AS relationships --------------------------------------------------------


@dataclass
class RelGraph:
    p2c: set[tuple[int, int]] = field(default_factory=set)
    peers: set[frozenset] = field(default_factory=set)

    def __post_init__(self):
        self._nodes: set[int] = set()
        for a, b in self.p2c:
            self._nodes.update((a, b))
        for pair in self.peers:
            self._nodes.update(pair)

    def add_p2c(self, provider: int, customer: int) -> None:
        self.p2c.add((provider, customer))
        self._nodes.update((provider, customer))

    def add_peer(self, a: int, b: int) -> None:
        self.peers.add(frozenset((a, b)))
        self._nodes.update((a, b))

    def __contains__(self, asn: int) -> bool:
        return asn in self._nodes

    def __len__(self) -> int:
        return len(self.p2c) + len(self.peers)

    def is_pc(self, a: int, b: int) -> bool:
        """Provider-customer link between a and b, in either direction."""
        return (a, b) in self.p2c or (b, a) in self.p2c


def parse_as_rel(text) -> tuple[RelGraph, list[Diagnostic]]:
    """Parse a CAIDA serial-1/serial-2 ``asn|asn|type[|source]`` file."""
    graph = RelGraph()
    diags: list[Diagnostic] = []
    for lineno, line in enumerate(_decode(text).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) < 3:
            diags.append(Diagnostic(lineno, "expected asn|asn|type"))
            continue
        try:
            a, b = parse_asn(parts[0]), parse_asn(parts[1])
            kind = int(parts[2])
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
            continue
        if a == b:
            diags.append(Diagnostic(lineno, "self edge"))
        elif kind == -1:
            if (b, a) in graph.p2c:
                diags.append(Diagnostic(lineno, "contradicts reverse p2c edge"))
            else:
                graph.add_p2c(a, b)
        elif kind == 0:
            graph.add_peer(a, b)
        else:
            diags.append(Diagnostic(lineno, f"unknown relationship type {kind}"))
    return graph, diags


def dump_as_rel(graph: RelGraph) -> str:
    lines = [f"{p}|{c}|-1" for p, c in sorted(graph.p2c)]
    lines += [f"{a}|{b}|0" for a, b in sorted(tuple(sorted(p)) for p in graph.peers)]
    return "".join(line + "\n" for line in lines)


# -- AS organizations --------------------------------------------------------

OrgMap = dict  # Asn -> organization id


def parse_as2org(text) -> tuple[dict[int, str], list[Diagnostic]]:
    """Parse JSON-lines as2org records; only ASN ("aut") records are used."""
    orgs: dict[int, str] = {}
    diags: list[Diagnostic] = []
    for lineno, line in enumerate(_decode(text).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except ValueError as exc:
            diags.append(Diagnostic(lineno, f"bad JSON: {exc}"))
            continue
        if not isinstance(rec, dict):
            diags.append(Diagnostic(lineno, "record is not an object"))
            continue
        if str(rec.get("type", "ASN")).lower() not in ("asn", "aut"):
            continue
        raw_asn = rec.get("asn", rec.get("aut"))
        org = rec.get("org_id", rec.get("organizationId"))
        if raw_asn is None or org in (None, ""):
            diags.append(Diagnostic(lineno, "missing asn or org_id"))
            continue
        try:
            asn = parse_asn(raw_asn)
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
            continue
        org = str(org)
        if asn in orgs and orgs[asn] != org:
            diags.append(Diagnostic(lineno, f"AS{asn} remapped {orgs[asn]} -> {org}"))
        orgs[asn] = org
    return orgs, diags


def dump_as2org(orgs: dict[int, str]) -> str:
    return "".join(
        json.dumps({"type": "ASN", "asn": str(asn), "org_id": org}) + "\n"
        for asn, org in sorted(orgs.items())
    )


# -- AS hegemony -------------------------------------------------------------

GLOBAL = 0  # originasn marker for global hegemony rows


@dataclass(frozen=True)
class HegemonySeries:
    """Samples for one scope.  ``origin == 0`` means global hegemony of
    ``asn``; otherwise the dependency of ``origin`` on ``asn``."""

    origin: int
    asn: int
    times: tuple[int, ...]
    values: tuple[float, ...]

    @property
    def is_global(self) -> bool:
        return self.origin == GLOBAL

    def at_or_before(self, t: int) -> float | None:
        i = bisect.bisect_right(self.times, t)
        return self.values[i - 1] if i else None

    def before(self, t: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
        i = bisect.bisect_left(self.times, t)
        return self.times[:i], self.values[:i]

    def __len__(self):
        return len(self.times)


class HegemonyIndex:
    def __init__(self, series: Iterable[HegemonySeries] = ()):
        self._series = {(s.origin, s.asn): s for s in series}

    def __len__(self):
        return len(self._series)

    def __iter__(self):
        return iter(self._series[k] for k in sorted(self._series))

    def get(self, origin: int, asn: int) -> HegemonySeries | None:
        return self._series.get((origin, asn))

    def global_series(self, asn: int) -> HegemonySeries | None:
        return self._series.get((GLOBAL, asn))

    def local(self, origin: int, asn: int, t: int) -> float | None:
        s = self._series.get((origin, asn))
        return None if s is None else s.at_or_before(t)


def _parse_time(text: str) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    elif len(text) > 3 and text[-3] in "+-" and text[-2:].isdigit() and ":" in text[:-3]:
        text += ":00"  # IHR writes "+00"
    stamp = dt.datetime.fromisoformat(text.replace(" ", "T"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return int(stamp.timestamp())


def _format_time(t: int) -> str:
    return dt.datetime.fromtimestamp(t, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_hegemony(text) -> tuple[HegemonyIndex, list[Diagnostic]]:
    """Parse ``timebin,originasn,asn,hege`` rows into per-scope series."""
    diags: list[Diagnostic] = []
    rows: dict[tuple[int, int], dict[int, float]] = {}
    for lineno, row, err in csv_rows(_decode(text)):
        if err is not None:
            diags.append(Diagnostic(lineno, err))
            continue
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[0].strip().lower() == "timebin":
            continue
        if len(row) < 4:
            diags.append(Diagnostic(lineno, "expected timebin,originasn,asn,hege"))
            continue
        try:
            t = _parse_time(row[0])
            origin = parse_asn(row[1])
            asn = parse_asn(row[2])
            value = float(row[3])
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
            continue
        if math.isnan(value):
            diags.append(Diagnostic(lineno, "NaN hegemony value"))
            continue
        if not 0.0 <= value <= 1.0:
            diags.append(Diagnostic(lineno, f"value {value} clamped to [0,1]"))
            value = min(1.0, max(0.0, value))
        bucket = rows.setdefault((origin, asn), {})
        if t in bucket:
            diags.append(Diagnostic(lineno, "duplicate timebin; last value kept"))
        bucket[t] = value
    series = []
    for (origin, asn), samples in rows.items():
        times = tuple(sorted(samples))
        series.append(HegemonySeries(origin, asn, times, tuple(samples[t] for t in times)))
    return HegemonyIndex(series), diags


def dump_hegemony(index: HegemonyIndex) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timebin", "originasn", "asn", "hege"])
    for s in index:
        for t, v in zip(s.times, s.values):
            w.writerow([_format_time(t), s.origin, s.asn, repr(v)])
    return buf.getvalue()


# -- IRR route objects -------------------------------------------------------


@dataclass(frozen=True, order=True)
class RouteObject:
    prefix: Prefix
    origin: int
    source: str = ""


class IrrIndex:
    def __init__(self, objects: Iterable[RouteObject] = ()):
        self._objects = tuple(sorted(set(objects)))
        self._trie = PrefixTrie()
        for obj in self._objects:
            self._trie.insert(obj.prefix, obj)

    def __len__(self):
        return len(self._objects)

    def __iter__(self):
        return iter(self._objects)

    def covering(self, prefix: Prefix) -> list[RouteObject]:
        return self._trie.covering(prefix)

    def validates(self, origin: int, prefix: Prefix) -> bool:
        """A route object for ``origin`` equal to or covering ``prefix`` exists."""
        return any(o.origin == origin for o in self._trie.covering(prefix))


def parse_irr(text) -> tuple[IrrIndex, list[Diagnostic]]:
    """Parse RPSL text.  One route object per paragraph with route/route6 and
    origin attributes; other paragraphs are skipped."""
    objects: list[RouteObject] = []
    diags: list[Diagnostic] = []
    para: dict[str, str] = {}
    start = 1

    def flush():
        if not para:
            return
        route = para.get("route", para.get("route6"))
        if route is None:
            return
        if "origin" not in para:
            diags.append(Diagnostic(start, "route object without origin"))
            return
        try:
            objects.append(
                RouteObject(Prefix.parse(route), parse_asn(para["origin"]), para.get("source", ""))
            )
        except ValueError as exc:
            diags.append(Diagnostic(start, str(exc)))

    for lineno, line in enumerate(_decode(text).splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            flush()
            para = {}
            start = lineno + 1
            continue
        if stripped.startswith(("%", "#")) or line[0] in " \t+":
            continue
        key, sep, value = stripped.partition(":")
        if not sep:
            continue
        key = key.strip().lower()
        value = value.split("#", 1)[0].strip()
        para.setdefault(key, value)
    flush()
    return IrrIndex(objects), diags


def dump_irr(index: IrrIndex) -> str:
    chunks = []
    for obj in index:
        attr = "route" if obj.prefix.version == 4 else "route6"
        lines = [f"{attr}: {obj.prefix}", f"origin: AS{obj.origin}"]
        if obj.source:
            lines.append(f"source: {obj.source}")
        chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)


# -- geolocation -------------------------------------------------------------


class GeoIndex:
    """Prefix -> (lat, lon) with longest-prefix-match lookup, plus the
    prefixes announced by (or registered to) each ASN."""

    def __init__(self, rows: Iterable[tuple[Prefix, float, float]] = ()):
        self._rows: dict[Prefix, tuple[float, float]] = {}
        for prefix, lat, lon in rows:
            self._rows[prefix] = (lat, lon)
        self._trie = PrefixTrie()
        for prefix, loc in self._rows.items():
            self._trie.insert(prefix, loc)
        self.asn_prefixes: dict[int, tuple[Prefix, ...]] = {}
        self._located: dict[Prefix, tuple[float, float] | None] = {}

    def __len__(self):
        return len(self._rows)

    def rows(self):
        return sorted((p, lat, lon) for p, (lat, lon) in self._rows.items())

    def locate_address(self, version: int, address: int) -> tuple[float, float] | None:
        items = self._trie.longest_match(version, address)
        return items[-1] if items else None

    def locate(self, prefix: Prefix) -> tuple[float, float] | None:
        """Location of a prefix: longest match on its first address."""
        try:
            return self._located[prefix]
        except KeyError:
            loc = self._located[prefix] = self.locate_address(prefix.version, prefix.value)
            return loc

    def with_asn_prefixes(self, mapping: dict[int, Iterable[Prefix]]) -> "GeoIndex":
        clone = GeoIndex.__new__(GeoIndex)
        clone._rows = self._rows
        clone._trie = self._trie
        clone._located = self._located
        clone.asn_prefixes = {asn: tuple(sorted(set(ps))) for asn, ps in mapping.items()}
        return clone


def parse_geo(text) -> tuple[GeoIndex, list[Diagnostic]]:
    rows = []
    diags: list[Diagnostic] = []
    for lineno, row, err in csv_rows(_decode(text)):
        if err is not None:
            diags.append(Diagnostic(lineno, err))
            continue
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[0].strip().lower() == "network":
            continue
        if len(row) < 3:
            diags.append(Diagnostic(lineno, "expected network,latitude,longitude"))
            continue
        try:
            prefix = Prefix.parse(row[0])
            lat, lon = float(row[1]), float(row[2])
        except ValueError as exc:
            diags.append(Diagnostic(lineno, str(exc)))
            continue
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            diags.append(Diagnostic(lineno, f"coordinates out of range ({lat}, {lon})"))
            continue
        rows.append((prefix, lat, lon))
    return GeoIndex(rows), diags


def dump_geo(index: GeoIndex) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["network", "latitude", "longitude"])
    for prefix, lat, lon in index.rows():
        w.writerow([str(prefix), repr(lat), repr(lon)])
    return buf.getvalue()


# -- VRPs as a dataset kind ---------------------------------------------------


def parse_vrps(text) -> tuple[RoaIndex, list[Diagnostic]]:
    vrps, diags = parse_vrp_csv(_decode(text))
    return RoaIndex(vrps), diags


def dump_vrps(index: RoaIndex) -> str:
    return dump_vrp_csv(index.vrps)


# -- snapshot store ----------------------------------------------------------


@dataclass(frozen=True)
class DatasetKind:
    name: str
    suffix: str
    parse: Callable
    dump: Callable


KINDS: dict[str, DatasetKind] = {
    k.name: k
    for k in (
        DatasetKind("vrps", ".csv", parse_vrps, dump_vrps),
        DatasetKind("as_rel", ".txt", parse_as_rel, dump_as_rel),
        DatasetKind("as2org", ".jsonl", parse_as2org, dump_as2org),
        DatasetKind("hegemony", ".csv", parse_hegemony, dump_hegemony),
        DatasetKind("irr", ".rpsl", parse_irr, dump_irr),
        DatasetKind("geo", ".csv", parse_geo, dump_geo),
    )
}

MANIFEST = "manifest.json"


class SnapshotStore:
    """Daily snapshots per dataset kind.

    With a ``root`` directory each snapshot is persisted as
    ``<root>/<kind>/YYYY-MM-DD<suffix>`` and listed in ``manifest.json``.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._dates: dict[str, list[dt.date]] = {}
        self._cache: dict[tuple[str, dt.date], object] = {}
        if self.root is not None and (self.root / MANIFEST).exists():
            manifest = json.loads((self.root / MANIFEST).read_text())
            for kind, days in manifest.get("snapshots", {}).items():
                self._dates[kind] = sorted(dt.date.fromisoformat(d) for d in days)

    def put(self, kind: str, date: dt.date, artifact) -> None:
        spec = KINDS[kind]
        if self.root is not None:
            path = self.root / kind / f"{date.isoformat()}{spec.suffix}"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(spec.dump(artifact))
        days = self._dates.setdefault(kind, [])
        if date not in days:
            bisect.insort(days, date)
        self._cache[(kind, date)] = artifact
        self._write_manifest()

    def put_text(self, kind: str, date: dt.date, text: str) -> list[Diagnostic]:
        artifact, diags = KINDS[kind].parse(text)
        self.put(kind, date, artifact)
        return diags

    def _write_manifest(self) -> None:
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        manifest = {
            "snapshots": {k: [d.isoformat() for d in v] for k, v in sorted(self._dates.items())}
        }
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        os.replace(tmp, self.root / MANIFEST)

    def dates(self, kind: str) -> list[dt.date]:
        return list(self._dates.get(kind, ()))

    def latest_date(self, kind: str, date: dt.date) -> dt.date | None:
        days = self._dates.get(kind, [])
        i = bisect.bisect_right(days, date)
        return days[i - 1] if i else None

    def latest_at(self, kind: str, date: dt.date):
        day = self.latest_date(kind, date)
        if day is None:
            return None
        key = (kind, day)
        if key not in self._cache:
            spec = KINDS[kind]
            text = (self.root / kind / f"{day.isoformat()}{spec.suffix}").read_text()
            artifact, diags = spec.parse(text)
            for d in diags:
                log.warning("%s %s: %s", kind, day, d)
            self._cache[key] = artifact
        return self._cache[key]


def snapshot_put(store: SnapshotStore, kind: str, date: dt.date, artifact) -> None:
    store.put(kind, date, artifact)


def snapshot_latest_at(store: SnapshotStore, kind: str, date: dt.date):
    return store.latest_at(kind, date)
