"""Quarantine lifecycle, tightness scoring and the whitelist store."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from lov.features import FEATURES, FeatureVector
from lov.rov import Prefix, RouteKey, Status

T_THR = 0.3
QUARANTINE_DAYS = 14
WEEK = 7
PURGE_DAYS = 30
FORMAT_VERSION = 1


# -- tightness -----------------------------------------------------------------


@dataclass(frozen=True)
class TightnessWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.weights) != len(FEATURES):
            raise ValueError(f"expected {len(FEATURES)} weights")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {sum(self.weights)}, not 1")

    @classmethod
    def from_importance(cls, importance: Mapping[str, float]) -> "TightnessWeights":
        return cls(tuple(float(importance[name]) for name in FEATURES))

    @classmethod
    def uniform(cls) -> "TightnessWeights":
        return cls((1.0 / len(FEATURES),) * len(FEATURES))


def tightness(fv: FeatureVector, w: TightnessWeights) -> float:
    """Weighted sum of the six relation features minus weighted ASdist."""
    v = fv.values()
    ws = w.weights
    return (
        ws[0] * v[0] + ws[1] * v[1] + ws[2] * v[2] + ws[3] * v[3] + ws[4] * v[4] + ws[5] * v[5]
    ) - ws[6] * v[6]


# -- quarantine state ------------------------------------------------------------


class Reason(enum.Enum):
    CLASSIFIED_BENIGN = "classified_benign"
    UNVERIFIED_HIJACK = "unverified_hijack"
    NEW_POLICY = "new_policy"


class State(enum.Enum):
    PENDING = "pending"
    WHITELISTED = "whitelisted"
    REJECTED = "rejected"
    EXPIRED = "expired"


class Provenance(enum.Enum):
    FAST_PATH = "tightness_fast_path"
    BEHAVIOR = "behavior_monitoring"
    MANUAL = "manual"


@dataclass
class QuarantineEntry:
    key: RouteKey
    entered: dt.date
    reason: Reason
    sightings: set = field(default_factory=set)
    state: State = State.PENDING
    tightness: float | None = None
    period: int = QUARANTINE_DAYS

    @property
    def ends(self) -> dt.date:
        return self.entered + dt.timedelta(days=self.period)

    def observe(self, date: dt.date) -> None:
        if self.state is State.PENDING and self.entered <= date <= self.ends:
            self.sightings.add(date)


def observe(entry: QuarantineEntry, date: dt.date) -> None:
    entry.observe(date)


class MonitoringIncomplete(Exception):
    pass


def behavior_ok(entry: QuarantineEntry, end_date: dt.date) -> bool:
    """Frequency: some 7 consecutive days within the quarantine period hold at
    least two sightings.  Recency: the last sighting falls within the final
    week of the period."""
    if end_date < entry.ends:
        raise MonitoringIncomplete(f"{entry.key} quarantined until {entry.ends}")
    days = sorted(d for d in entry.sightings if entry.entered <= d <= entry.ends)
    if not days:
        return False
    if days[-1] < entry.ends - dt.timedelta(days=WEEK):
        return False
    # two sightings fall in one 7-day window iff consecutive ones are < 7 days apart
    return any((b - a).days < WEEK for a, b in zip(days, days[1:]))


def fast_path_whitelist(
    entry: QuarantineEntry, fv: FeatureVector, w: TightnessWeights, t_thr: float = T_THR
) -> State:
    if entry.reason is not Reason.CLASSIFIED_BENIGN:
        raise ValueError("fast path only applies to classifier-benign routes")
    entry.tightness = tightness(fv, w)
    if entry.tightness >= t_thr:
        entry.state = State.WHITELISTED
    return entry.state


# -- root causes -----------------------------------------------------------------


class Cause(enum.Enum):
    DEAGGREGATION = "deaggregation"
    DEPENDENCIES = "dependencies"
    MULTI_ORIGINS = "multi_origins"
    DELAYED_ROAS = "delayed_roas"


def categorize_cause(fv: FeatureVector, pair=None) -> set[Cause]:
    """Root-cause labels of a benign conflict; several may apply.

    Without ``pair`` the origins are taken to differ unless OriginMatch is set.
    """
    if pair is not None:
        distinct = pair.bgp_origin not in pair.roa_origins
    else:
        distinct = fv.origin_match == 0
    related = (
        fv.origin_match == 1 or fv.pc == 1 or fv.moas == 1 or fv.parent == 1 or fv.depen > 0
    )
    causes = set()
    if fv.origin_match == 1:
        causes.add(Cause.DEAGGREGATION)
    # a matching-origin ROA already implies Parent; only a foreign one counts here
    if fv.pc == 1 or fv.depen > 0 or (fv.parent == 1 and fv.origin_match == 0):
        causes.add(Cause.DEPENDENCIES)
    elif fv.as_dist == 0 and not related:
        causes.add(Cause.DEPENDENCIES)
    if fv.moas == 1 and distinct:
        causes.add(Cause.MULTI_ORIGINS)
    if fv.alt_sources == 1 and not related:
        causes.add(Cause.DELAYED_ROAS)
    return causes


# -- whitelist store ---------------------------------------------------------------


@dataclass(frozen=True)
class WhitelistEntry:
    origin: int
    prefix: Prefix
    added: dt.date
    last_seen: dt.date
    provenance: Provenance

    @property
    def key(self) -> RouteKey:
        return RouteKey(self.origin, self.prefix)


@dataclass
class ChangeReport:
    date: dt.date
    added: list[tuple[RouteKey, str]] = field(default_factory=list)
    purged: list[tuple[RouteKey, str]] = field(default_factory=list)
    expired: list[RouteKey] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "added": [[k.origin, str(k.prefix), why] for k, why in self.added],
            "purged": [[k.origin, str(k.prefix), why] for k, why in self.purged],
            "expired": [[k.origin, str(k.prefix)] for k in self.expired],
        }


class WhitelistStore:
    """Whitelist, quarantine and deny set.  One writer at a time."""

    def __init__(self):
        self.entries: dict[RouteKey, WhitelistEntry] = {}
        self.quarantine: dict[RouteKey, QuarantineEntry] = {}
        self.denied: dict[RouteKey, str] = {}
        self.generation: dt.date | None = None

    # whitelist ---------------------------------------------------------------

    def check(self, origin: int, prefix: Prefix) -> bool:
        return RouteKey(origin, prefix) in self.entries

    def add(self, key: RouteKey, date: dt.date, provenance: Provenance) -> bool:
        """Insert or refresh an entry; returns False when the key is denied."""
        if key in self.denied:
            return False
        old = self.entries.get(key)
        if old is not None:
            self.entries[key] = replace(old, last_seen=max(old.last_seen, date))
            return True
        self.entries[key] = WhitelistEntry(key.origin, key.prefix, date, date, provenance)
        return True

    # quarantine --------------------------------------------------------------

    def admit(
        self, key: RouteKey, date: dt.date, reason: Reason, period: int = QUARANTINE_DAYS
    ) -> QuarantineEntry:
        """Quarantine a route, or return its live entry.  A finished entry is
        replaced by a fresh one."""
        entry = self.quarantine.get(key)
        if entry is None or (entry.state is not State.PENDING and entry.entered != date):
            entry = QuarantineEntry(key, date, reason, period=period)
            if key in self.denied:
                entry.state = State.REJECTED
            self.quarantine[key] = entry
        entry.observe(date)
        return entry

    def fast_path(
        self, entry: QuarantineEntry, fv: FeatureVector, w: TightnessWeights, date: dt.date,
        t_thr: float = T_THR,
    ) -> bool:
        if entry.state is not State.PENDING or entry.key in self.denied:
            return False
        if fast_path_whitelist(entry, fv, w, t_thr) is State.WHITELISTED:
            self.add(entry.key, date, Provenance.FAST_PATH)
            return True
        return False

    def pending(self) -> list[QuarantineEntry]:
        return sorted(
            (e for e in self.quarantine.values() if e.state is State.PENDING),
            key=lambda e: (e.entered, e.key),
        )

    # manual review -------------------------------------------------------------

    def manual_decision(self, key: RouteKey, allow: bool, date: dt.date, note: str = "") -> State:
        entry = self.quarantine.get(key)
        if allow:
            if key in self.denied:
                return State.REJECTED
            self.add(key, date, Provenance.MANUAL)
            if entry is not None:
                entry.state = State.WHITELISTED
            return State.WHITELISTED
        self.denied[key] = note
        self.entries.pop(key, None)
        if entry is not None:
            entry.state = State.REJECTED
        return State.REJECTED

    # daily maintenance --------------------------------------------------------

    def daily_update(
        self,
        date: dt.date,
        statuses: Mapping[RouteKey, Status],
        sightings: Iterable[RouteKey],
        purge_days: int = PURGE_DAYS,
    ) -> ChangeReport:
        report = ChangeReport(date)
        seen = set(sightings)
        for key in seen:
            old = self.entries.get(key)
            if old is not None and old.last_seen < date:
                self.entries[key] = replace(old, last_seen=date)
            q = self.quarantine.get(key)
            if q is not None:
                q.observe(date)

        for key in sorted(self.quarantine):
            q = self.quarantine[key]
            if q.state is not State.PENDING:
                continue
            if key in self.denied:
                q.state = State.REJECTED
                continue
            if date < q.ends:
                continue
            if behavior_ok(q, date):
                q.state = State.WHITELISTED
                if key not in self.entries and self.add(key, date, Provenance.BEHAVIOR):
                    report.added.append((key, Provenance.BEHAVIOR.value))
            else:
                q.state = State.EXPIRED
                report.expired.append(key)

        for key in sorted(self.entries):
            e = self.entries[key]
            status = statuses.get(key)
            if (date - e.last_seen).days > purge_days:
                why = "stale"
            elif status in (Status.VALID, Status.UNKNOWN):
                why = "resolved"
            elif key in self.denied:
                why = "denied"
            else:
                continue
            del self.entries[key]
            report.purged.append((key, why))
        self.generation = date
        return report

    # persistence ---------------------------------------------------------------

    def to_json(self) -> dict:
        def k(key):
            return [key.origin, str(key.prefix)]

        return {
            "format_version": FORMAT_VERSION,
            "generation": self.generation.isoformat() if self.generation else None,
            "entries": [
                {
                    "origin": e.origin,
                    "prefix": str(e.prefix),
                    "added": e.added.isoformat(),
                    "last_seen": e.last_seen.isoformat(),
                    "provenance": e.provenance.value,
                }
                for _, e in sorted(self.entries.items())
            ],
            "quarantine": [
                {
                    "key": k(q.key),
                    "entered": q.entered.isoformat(),
                    "reason": q.reason.value,
                    "sightings": sorted(d.isoformat() for d in q.sightings),
                    "state": q.state.value,
                    "tightness": q.tightness,
                    "period": q.period,
                }
                for _, q in sorted(self.quarantine.items())
            ],
            "denied": [k(key) + [note] for key, note in sorted(self.denied.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WhitelistStore":
        if obj.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported store format {obj.get('format_version')!r}")
        store = cls()
        gen = obj.get("generation")
        store.generation = dt.date.fromisoformat(gen) if gen else None
        for e in obj["entries"]:
            entry = WhitelistEntry(
                int(e["origin"]),
                Prefix.parse(e["prefix"]),
                dt.date.fromisoformat(e["added"]),
                dt.date.fromisoformat(e["last_seen"]),
                Provenance(e["provenance"]),
            )
            store.entries[entry.key] = entry
        for q in obj["quarantine"]:
            key = RouteKey(int(q["key"][0]), Prefix.parse(q["key"][1]))
            store.quarantine[key] = QuarantineEntry(
                key,
                dt.date.fromisoformat(q["entered"]),
                Reason(q["reason"]),
                {dt.date.fromisoformat(d) for d in q["sightings"]},
                State(q["state"]),
                q["tightness"],
                int(q.get("period", QUARANTINE_DAYS)),
            )
        for origin, prefix, note in obj["denied"]:
            store.denied[RouteKey(int(origin), Prefix.parse(prefix))] = note
        return store

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        write_atomic(path, self.dumps())

    @classmethod
    def load(cls, path) -> "WhitelistStore":
        return cls.from_json(json.loads(Path(path).read_text()))


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def whitelist_check(store: WhitelistStore, origin: int, prefix: Prefix) -> bool:
    return store.check(origin, prefix)


def daily_update(store: WhitelistStore, date, statuses, sightings) -> ChangeReport:
    return store.daily_update(date, statuses, sightings)


def manual_decision(store: WhitelistStore, key: RouteKey, verdict: str, date, note: str = ""):
    if verdict.lower() not in ("allow", "deny"):
        raise ValueError(f"verdict must be allow or deny, not {verdict!r}")
    return store.manual_decision(key, verdict.lower() == "allow", date, note)


# -- exports -------------------------------------------------------------------------

WHITELIST_CSV_HEADER = ["origin", "prefix", "added", "last_seen", "provenance"]


def export_whitelist_json(entries: Iterable[WhitelistEntry], generation) -> str:
    return json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "generation": generation.isoformat() if generation else None,
            "entries": [
                {
                    "origin": e.origin,
                    "prefix": str(e.prefix),
                    "added": e.added.isoformat(),
                    "last_seen": e.last_seen.isoformat(),
                    "provenance": e.provenance.value,
                }
                for e in entries
            ],
        },
        sort_keys=True,
    )


def export_whitelist_csv(entries: Iterable[WhitelistEntry], generation) -> str:
    buf = io.StringIO()
    gen = generation.isoformat() if generation else ""
    buf.write(f"# lov-whitelist format_version={FORMAT_VERSION} generation={gen}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(WHITELIST_CSV_HEADER)
    for e in entries:
        w.writerow([e.origin, str(e.prefix), e.added, e.last_seen, e.provenance.value])
    return buf.getvalue()


def parse_whitelist_json(text: str) -> tuple[dt.date | None, list[WhitelistEntry]]:
    obj = json.loads(text)
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported whitelist format {obj.get('format_version')!r}")
    gen = obj.get("generation")
    entries = [
        WhitelistEntry(
            int(e["origin"]),
            Prefix.parse(e["prefix"]),
            dt.date.fromisoformat(e["added"]),
            dt.date.fromisoformat(e["last_seen"]),
            Provenance(e["provenance"]),
        )
        for e in obj["entries"]
    ]
    return (dt.date.fromisoformat(gen) if gen else None), entries


def export_denied_csv(store: WhitelistStore) -> str:
    buf = io.StringIO()
    buf.write(f"# lov-denied format_version={FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["origin", "prefix", "note"])
    for key, note in sorted(store.denied.items()):
        w.writerow([key.origin, str(key.prefix), note])
    return buf.getvalue()
