"""Daily batch run: dedup, ROV, features, classifier, post-analysis, quarantine.

Store layout under ``store_dir``::

    state.json           whitelist + quarantine + deny set (private)
    whitelist.json/csv   published snapshot read by the HTTP service
    denied.csv
    history/DATE.json    store state before the first run of DATE

Reports go to ``report_dir/DATE.*``.  Re-running a date first restores the
store from ``history/DATE.json`` so identical inputs give identical outputs.
"""

from __future__ import annotations

import configparser
import dataclasses
import datetime as dt
import io
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lov.classifier import Label, TrainedModel
from lov.features import FEATURES, ConflictPair, FeatureContext, FeatureVector, compute_features
from lov.ingest import KINDS, SnapshotStore
from lov.postanalyzer import Verdict, verify
from lov.quarantine import (
    PURGE_DAYS,
    QUARANTINE_DAYS,
    T_THR,
    Reason,
    State,
    TightnessWeights,
    WhitelistStore,
    categorize_cause,
    export_denied_csv,
    export_whitelist_csv,
    export_whitelist_json,
    tightness,
    write_atomic,
)
from lov.rov import Announcement, Prefix, RouteKey, Status, is_bogon_asn, parse_asn

log = logging.getLogger(__name__)

ENV_PREFIX = "LOV_"
SECTION = "lov"
BUCKETS = ("whitelisted", "pending", "verified_hijack", "unverified_quarantined", "denied")


class PipelineError(Exception):
    """Aborts a run before the store is touched."""


# -- config --------------------------------------------------------------------


@dataclass
class PipelineConfig:
    snapshot_dir: Path
    model_path: Path
    store_dir: Path
    report_dir: Path | None = None
    alpha: float = 0.05
    t_thr: float = T_THR
    quarantine_days: int = QUARANTINE_DAYS
    purge_days: int = PURGE_DAYS
    seed: int = 0
    host: str = "127.0.0.1"
    port: int = 8080

    def __post_init__(self):
        for name in ("snapshot_dir", "model_path", "store_dir", "report_dir"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, Path(v))
        if self.report_dir is None:
            self.report_dir = self.store_dir / "reports"
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not -1.0 <= self.t_thr <= 1.0:
            raise ValueError(f"t_thr must be in [-1, 1], got {self.t_thr}")
        if self.quarantine_days < 1:
            raise ValueError("quarantine_days must be >= 1")
        if self.purge_days < 1:
            raise ValueError("purge_days must be >= 1")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"bad port {self.port}")

    @classmethod
    def from_mapping(cls, values: dict, base: Path | None = None) -> "PipelineConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values or values[f.name] in (None, ""):
                continue
            raw = values[f.name]
            if f.name.endswith("_dir") or f.name.endswith("_path"):
                p = Path(os.path.expanduser(str(raw)))
                kwargs[f.name] = p if p.is_absolute() or base is None else base / p
            elif f.name in ("alpha", "t_thr"):
                kwargs[f.name] = float(raw)
            elif f.name in ("quarantine_days", "purge_days", "seed", "port"):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = str(raw)
        unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path, env: dict | None = None) -> "PipelineConfig":
        """Read an INI file with a ``[lov]`` section; ``LOV_<KEY>`` variables win."""
        path = Path(path)
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        if not parser.has_section(SECTION):
            raise ValueError(f"{path}: missing [{SECTION}] section")
        values = dict(parser[SECTION])
        env = os.environ if env is None else env
        for f in dataclasses.fields(cls):
            key = ENV_PREFIX + f.name.upper()
            if key in env:
                values[f.name] = env[key]
        return cls.from_mapping(values, base=path.parent)

    def dumps(self) -> str:
        parser = configparser.ConfigParser()
        parser[SECTION] = {
            f.name: str(getattr(self, f.name)) for f in dataclasses.fields(self)
        }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        write_atomic(path, self.dumps())

    # layout
    @property
    def state_path(self) -> Path:
        return self.store_dir / "state.json"

    @property
    def published_path(self) -> Path:
        return self.store_dir / "whitelist.json"

    def history_path(self, date: dt.date) -> Path:
        return self.store_dir / "history" / f"{date.isoformat()}.json"


def load_store(config: PipelineConfig) -> WhitelistStore:
    if config.state_path.exists():
        return WhitelistStore.load(config.state_path)
    return WhitelistStore()


def publish(store: WhitelistStore, config: PipelineConfig) -> None:
    """Persist the store and the read-only snapshots served over HTTP."""
    entries = [store.entries[k] for k in sorted(store.entries)]
    store.save(config.state_path)
    write_atomic(config.store_dir / "whitelist.csv", export_whitelist_csv(entries, store.generation))
    write_atomic(config.store_dir / "denied.csv", export_denied_csv(store))
    # the JSON snapshot is what the server watches, so it goes last
    write_atomic(config.published_path, export_whitelist_json(entries, store.generation))


# -- report --------------------------------------------------------------------


@dataclass
class DailyReport:
    date: dt.date
    announcements: int = 0
    malformed: int = 0
    routes: int = 0
    valid: int = 0
    invalid: int = 0
    unknown: int = 0
    bogon_excluded: int = 0
    benign: int = 0
    hijack: int = 0
    verified: int = 0
    unverified: int = 0
    new_policy: int = 0
    buckets: dict = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    causes: dict = field(default_factory=dict)
    whitelist_added: int = 0
    whitelist_purged: int = 0
    quarantine_expired: int = 0
    whitelist_size: int = 0
    pending: int = 0
    occurrences: dict = field(default_factory=dict)
    changes: dict = field(default_factory=dict)

    def check(self) -> None:
        if self.invalid != self.benign + self.hijack:
            raise AssertionError(f"invalid {self.invalid} != {self.benign} + {self.hijack}")
        if self.hijack != self.verified + self.unverified:
            raise AssertionError(f"hijack {self.hijack} != {self.verified} + {self.unverified}")
        if sum(self.buckets.values()) != self.invalid:
            raise AssertionError(f"buckets {self.buckets} do not sum to {self.invalid}")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["date"] = self.date.isoformat()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"


@dataclass(frozen=True)
class RouteOutcome:
    key: RouteKey
    ts: int
    features: FeatureVector
    label: Label
    score: float | None
    verdict: str | None
    z: float | None
    p_right: float | None
    tightness: float
    bucket: str
    causes: tuple[str, ...]


def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


# -- input ---------------------------------------------------------------------


def read_announcements(path) -> tuple[dict[RouteKey, Announcement], int, int]:
    """Unique routes keyed by (origin, prefix), keeping the earliest sighting
    (file order breaks timestamp ties).  Returns (routes, total, malformed)."""
    routes: dict[RouteKey, Announcement] = {}
    prefixes: dict[str, Prefix] = {}
    total = bad = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                path_ = obj["as_path"]
                if not isinstance(path_, list) or not path_:
                    raise ValueError("as_path must be a non-empty array")
                if any(isinstance(h, (list, dict)) for h in path_):
                    raise ValueError("AS_SET segments are not supported")
                text = obj["prefix"]
                prefix = prefixes.get(text)
                if prefix is None:
                    prefix = prefixes[text] = Prefix.parse(text)
                hops = tuple(h if type(h) is int and 0 <= h < 2**32 else parse_asn(h) for h in path_)
                ts = int(obj["ts"])
                peer = obj.get("peer_asn")
                ann = Announcement(prefix, hops, ts, parse_asn(peer) if peer is not None else None)
            except (ValueError, KeyError, TypeError) as exc:
                bad += 1
                log.debug("%s:%d: %s", path, lineno, exc)
                continue
            key = ann.key
            old = routes.get(key)
            if old is None or ann.timestamp < old.timestamp:
                routes[key] = ann
    return routes, total, bad


# -- the run -------------------------------------------------------------------


def _load_inputs(config: PipelineConfig, date: dt.date):
    if not config.model_path.exists():
        raise PipelineError(f"model file {config.model_path} not found")
    try:
        model = TrainedModel.load(config.model_path)
    except (ValueError, KeyError, OSError) as exc:
        raise PipelineError(f"cannot load model {config.model_path}: {exc}") from exc
    if model.tightness_weights is None:
        raise PipelineError("model carries no tightness weights; retrain with `lov train`")
    snaps = SnapshotStore(config.snapshot_dir)
    missing = [k for k in KINDS if snaps.latest_date(k, date) is None]
    if missing:
        raise PipelineError(f"no snapshot on or before {date} for: {', '.join(missing)}")
    data = {k: snaps.latest_at(k, date) for k in KINDS}
    return model, data


def _restore_or_checkpoint(config: PipelineConfig, date: dt.date) -> WhitelistStore:
    hist = config.history_path(date)
    if hist.exists():
        store = WhitelistStore.load(hist)
        # later checkpoints and reports describe a timeline this rerun replaces
        for p in hist.parent.glob("*.json"):
            if p.stem > date.isoformat():
                p.unlink()
        if config.report_dir.exists():
            for p in config.report_dir.glob("*.*"):
                if p.name.split(".")[0] > date.isoformat():
                    p.unlink()
        return store
    store = load_store(config)
    if store.generation is not None and store.generation >= date:
        raise PipelineError(
            f"store generation {store.generation} is not before {date} and no checkpoint exists"
        )
    write_atomic(hist, store.dumps())
    return store


def run_day(config: PipelineConfig, announcements_path, date: dt.date) -> DailyReport:
    """Process one day of announcements and publish the updated whitelist."""
    announcements_path = Path(announcements_path)
    if not announcements_path.exists():
        raise PipelineError(f"announcements file {announcements_path} not found")
    model, data = _load_inputs(config, date)
    weights = TightnessWeights(tuple(model.tightness_weights))
    routes, total, bad = read_announcements(announcements_path)

    store = _restore_or_checkpoint(config, date)
    report = DailyReport(date, announcements=total, malformed=bad, routes=len(routes))

    index = data["vrps"]
    statuses: dict[RouteKey, Status] = {}
    invalid: list[tuple[RouteKey, ConflictPair]] = []
    for key in sorted(routes):
        ann = routes[key]
        st = index.validate(ann)
        statuses[key] = st.status
        if st.status is Status.VALID:
            report.valid += 1
        elif st.status is Status.UNKNOWN:
            report.unknown += 1
        elif is_bogon_asn(key.origin):
            report.bogon_excluded += 1
        else:
            invalid.append((key, ConflictPair(ann, frozenset(v.asn for v in st.matched_vrps))))
    report.invalid = len(invalid)

    asn_prefixes: dict[int, set[Prefix]] = {}
    for v in index.vrps:
        asn_prefixes.setdefault(v.asn, set()).add(v.prefix)
    for key in routes:
        asn_prefixes.setdefault(key.origin, set()).add(key.prefix)
    ctx = FeatureContext(
        index,
        data["as_rel"],
        data["as2org"],
        data["hegemony"],
        data["irr"],
        data["geo"].with_asn_prefixes(asn_prefixes),
    )
    fvs = [compute_features(pair, ctx, config.seed) for _, pair in invalid]
    listed = [store.check(k.origin, k.prefix) for k, _ in invalid]
    todo = [i for i, hit in enumerate(listed) if not hit]
    scores = np.zeros(len(invalid))
    if todo:
        scores[todo] = model.scores(np.array([fvs[i].values() for i in todo]))

    outcomes: list[RouteOutcome] = []
    causes = Counter()
    for i, (key, pair) in enumerate(invalid):
        fv = fvs[i]
        t_val = tightness(fv, weights)
        score = verdict = z = p = None
        if listed[i]:
            label = Label.BENIGN
            bucket = "whitelisted"
        else:
            score = float(scores[i])
            label = Label.HIJACK if score >= 0.5 else Label.BENIGN
            if label is Label.BENIGN:
                entry = store.admit(key, date, Reason.CLASSIFIED_BENIGN, config.quarantine_days)
                entry.tightness = t_val
                if store.fast_path(entry, fv, weights, date, config.t_thr):
                    bucket = "whitelisted"
                elif key in store.entries:
                    bucket = "whitelisted"
                else:
                    bucket = "pending"
            else:
                series = data["hegemony"].global_series(key.origin)
                res = verify(series, pair.announcement.timestamp, config.alpha)
                verdict, z, p = res.verdict.value, res.z, res.p_right
                if res.verdict is Verdict.VERIFIED:
                    report.verified += 1
                    bucket = "verified_hijack"
                else:
                    report.unverified += 1
                    if res.verdict is Verdict.NEW_POLICY:
                        report.new_policy += 1
                    reason = (
                        Reason.NEW_POLICY
                        if res.verdict is Verdict.NEW_POLICY
                        else Reason.UNVERIFIED_HIJACK
                    )
                    entry = store.admit(key, date, reason, config.quarantine_days)
                    bucket = "whitelisted" if entry.state is State.WHITELISTED else (
                        "unverified_quarantined"
                    )
        if key in store.denied:
            bucket = "denied"
        if label is Label.BENIGN:
            report.benign += 1
            why = tuple(sorted(c.value for c in categorize_cause(fv, pair)))
            causes.update(why)
        else:
            report.hijack += 1
            why = ()
        report.buckets[bucket] += 1
        outcomes.append(
            RouteOutcome(key, pair.announcement.timestamp, fv, label, score, verdict, z, p,
                         t_val, bucket, why)
        )
    report.causes = {k: causes[k] for k in sorted(causes)}

    change = store.daily_update(date, statuses, routes.keys(), config.purge_days)
    report.whitelist_added = sum(1 for e in store.entries.values() if e.added == date)
    report.whitelist_purged = len(change.purged)
    report.quarantine_expired = len(change.expired)
    report.whitelist_size = len(store.entries)
    report.pending = len(store.pending())
    report.changes = change.to_json()
    report.check()

    _write_reports(config, report, outcomes)
    report.occurrences = occurrence_summary(benign_occurrences(config.report_dir, date))
    write_atomic(config.report_dir / f"{date.isoformat()}.json", report.dumps())
    publish(store, config)
    return report


def _write_reports(config: PipelineConfig, report: DailyReport, outcomes) -> None:
    day = report.date.isoformat()
    lines = []
    for o in outcomes:
        if o.label is not Label.HIJACK:
            continue
        lines.append(json.dumps({
            "origin": o.key.origin,
            "prefix": str(o.key.prefix),
            "ts": o.ts,
            "z": _num(o.z),
            "p_right": _num(o.p_right),
            "verdict": o.verdict,
        }, sort_keys=True))
    write_atomic(config.report_dir / f"{day}.verification.jsonl", "".join(s + "\n" for s in lines))

    rows = ["origin,prefix,ts," + ",".join(FEATURES) + ",label,score,tightness,bucket,causes"]
    for o in outcomes:
        vals = ",".join(repr(v) for v in o.features.values())
        score = "" if o.score is None else repr(o.score)
        rows.append(
            f"{o.key.origin},{o.key.prefix},{o.ts},{vals},{o.label},{score},"
            f"{o.tightness!r},{o.bucket},{'|'.join(o.causes)}"
        )
    write_atomic(config.report_dir / f"{day}.routes.csv", "\n".join(rows) + "\n")


# -- occurrence / frequency statistics ----------------------------------------------


def benign_occurrences(report_dir, until: dt.date | None = None) -> dict[RouteKey, list[dt.date]]:
    """Days on which each route was judged benign, from the per-day route reports."""
    seen: dict[RouteKey, list[dt.date]] = {}
    for path in sorted(Path(report_dir).glob("*.routes.csv")):
        day = dt.date.fromisoformat(path.name.split(".")[0])
        if until is not None and day > until:
            continue
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split(",")
            col = header.index("label")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                if parts[col] != "benign":
                    continue
                key = RouteKey(int(parts[0]), Prefix.parse(parts[1]))
                seen.setdefault(key, []).append(day)
    return seen


def frequency(days: list[dt.date]) -> float:
    """Occurrences per day over the span from first to last sighting."""
    span = (max(days) - min(days)).days + 1
    return len(days) / span


def percentile(values, q: float) -> float:
    """Nearest-rank percentile, q in (0, 100]."""
    if not values:
        raise ValueError("percentile of empty data")
    if not 0 < q <= 100:
        raise ValueError(f"q must be in (0, 100], got {q}")
    ordered = sorted(values)
    # q * n first: with integer q this stays exact (0.07 * 100 would round up)
    rank = math.ceil(q * len(ordered) / 100.0)
    return ordered[max(rank, 1) - 1]


def cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, fraction <= value) at each distinct value."""
    ordered = sorted(values)
    n = len(ordered)
    out = []
    for i, v in enumerate(ordered):
        if i + 1 == n or ordered[i + 1] != v:
            out.append((v, (i + 1) / n))
    return out


def occurrence_summary(seen: dict[RouteKey, list[dt.date]]) -> dict:
    if not seen:
        return {"routes": 0}
    occ = [len(v) for v in seen.values()]
    freq = [frequency(v) for v in seen.values()]
    return {
        "routes": len(seen),
        "occurrences_p50": percentile(occ, 50),
        "occurrences_p80": percentile(occ, 80),
        "frequency_p50": percentile(freq, 50),
        "frequency_p80": percentile(freq, 80),
    }


def replay(config: PipelineConfig, announcements_dir, start: dt.date, end: dt.date):
    """Run every day in [start, end] whose ``DATE.jsonl`` exists."""
    reports = []
    day = start
    while day <= end:
        path = Path(announcements_dir) / f"{day.isoformat()}.jsonl"
        if path.exists():
            reports.append(run_day(config, path, day))
        else:
            log.warning("no announcements for %s", day)
        day += dt.timedelta(days=1)
    return reports
