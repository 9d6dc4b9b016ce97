"""The seven origin-relationship features of an RPKI-invalid route."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from lov.ingest import GeoIndex, HegemonyIndex, IrrIndex, RelGraph
from lov.rov import Announcement, Prefix, RoaIndex, Status

FEATURES = ("origin_match", "pc", "moas", "parent", "depen", "alt_sources", "as_dist")
DEFAULTS = {name: 0.0 for name in FEATURES} | {"as_dist": 1.0}

EARTH_RADIUS_KM = 6371.0
MAX_DISTANCE_SAMPLE = 500


@dataclass(frozen=True)
class FeatureVector:
    origin_match: float = 0.0
    pc: float = 0.0
    moas: float = 0.0
    parent: float = 0.0
    depen: float = 0.0
    alt_sources: float = 0.0
    as_dist: float = 1.0
    missing: frozenset = field(default=frozenset(), compare=False)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURES)

    @classmethod
    def from_values(cls, values, missing=frozenset()) -> "FeatureVector":
        return cls(*(float(v) for v in values), missing=frozenset(missing))


@dataclass(frozen=True)
class ConflictPair:
    announcement: Announcement
    roa_origins: frozenset

    @property
    def bgp_origin(self) -> int:
        return self.announcement.origin

    @property
    def prefix(self) -> Prefix:
        return self.announcement.prefix

    @classmethod
    def from_index(cls, ann: Announcement, index: RoaIndex) -> "ConflictPair":
        status = index.validate(ann)
        if status.status is not Status.INVALID:
            raise ValueError(f"{ann.key} is {status.status.value}, not invalid")
        return cls(ann, frozenset(v.asn for v in status.matched_vrps))


@dataclass
class FeatureContext:
    """Dataset snapshots selected for one announcement date.  Any of the
    optional sources may be None; the corresponding features then default."""

    index: RoaIndex
    rel: RelGraph | None = None
    orgs: dict | None = None
    hegemony: HegemonyIndex | None = None
    irr: IrrIndex | None = None
    geo: GeoIndex | None = None


def f_origin_match(pair: ConflictPair, index: RoaIndex) -> int:
    return int(any(v.asn == pair.bgp_origin for v in index.covering(pair.prefix)))


def f_pc(pair: ConflictPair, rel: RelGraph) -> int:
    return int(any(rel.is_pc(r, pair.bgp_origin) for r in pair.roa_origins))


def f_moas(pair: ConflictPair, orgs: dict) -> int:
    if pair.bgp_origin in pair.roa_origins:
        return 1
    org = orgs.get(pair.bgp_origin)
    if org is None:
        return 0
    return int(any(orgs.get(r) == org for r in pair.roa_origins))


def f_parent(pair: ConflictPair, index: RoaIndex) -> int:
    for v in index.covering(pair.prefix):
        if v.asn == pair.bgp_origin and v.prefix.length < pair.prefix.length:
            return 1
    return 0


def f_depen(pair: ConflictPair, heg: HegemonyIndex, t: int) -> float | None:
    """Largest local hegemony between the origins in either direction, or
    None when no sample exists at or before ``t``."""
    best = None
    bgp = pair.bgp_origin
    for r in sorted(pair.roa_origins):
        for value in (heg.local(r, bgp, t), heg.local(bgp, r, t)):
            if value is not None and (best is None or value > best):
                best = value
    return best


def f_alt_sources(pair: ConflictPair, irr: IrrIndex) -> int:
    return int(irr.validates(pair.bgp_origin, pair.prefix))


def great_circle_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Haversine distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _pair_rng(pair: ConflictPair, seed: int) -> random.Random:
    return random.Random(f"{seed}:{pair.bgp_origin}:{pair.prefix}")


def raw_distance_d(pair: ConflictPair, geo: GeoIndex, seed: int = 0) -> float | None:
    """Median distance from the announced prefix to the BGP origin's prefixes.

    The announced prefix's location stands in for the ROA origin.  Origins with
    more than 500 prefixes are subsampled without replacement.  Even-length
    lists take the lower-middle element.
    """
    here = geo.locate(pair.prefix)
    if here is None:
        return None
    prefixes = list(geo.asn_prefixes.get(pair.bgp_origin, ()))
    if len(prefixes) > MAX_DISTANCE_SAMPLE:
        prefixes = _pair_rng(pair, seed).sample(prefixes, MAX_DISTANCE_SAMPLE)
    dists = []
    for p in prefixes:
        loc = geo.locate(p)
        if loc is not None:
            dists.append(great_circle_km(here, loc))
    if not dists:
        return None
    dists.sort()
    return dists[(len(dists) - 1) // 2]


def f_as_dist(d: float | None) -> float:
    if d is None:
        return 1.0
    return 2.0 / math.pi * math.atan(d)


def compute_features(pair: ConflictPair, ctx: FeatureContext, seed: int = 0) -> FeatureVector:
    missing = set()
    values = dict(DEFAULTS)

    if len(ctx.index):
        values["origin_match"] = f_origin_match(pair, ctx.index)
        values["parent"] = f_parent(pair, ctx.index)
    else:
        missing.update(("origin_match", "parent"))

    rel = ctx.rel
    if rel is not None and pair.bgp_origin in rel and any(r in rel for r in pair.roa_origins):
        values["pc"] = f_pc(pair, rel)
    else:
        missing.add("pc")

    orgs = ctx.orgs
    if pair.bgp_origin in pair.roa_origins:
        values["moas"] = 1
    elif orgs and pair.bgp_origin in orgs and any(r in orgs for r in pair.roa_origins):
        values["moas"] = f_moas(pair, orgs)
    else:
        missing.add("moas")

    depen = None
    if ctx.hegemony is not None:
        depen = f_depen(pair, ctx.hegemony, pair.announcement.timestamp)
    if depen is None:
        missing.add("depen")
    else:
        values["depen"] = depen

    if ctx.irr is not None and len(ctx.irr):
        values["alt_sources"] = f_alt_sources(pair, ctx.irr)
    else:
        missing.add("alt_sources")

    d = raw_distance_d(pair, ctx.geo, seed) if ctx.geo is not None else None
    if d is None:
        missing.add("as_dist")
    values["as_dist"] = f_as_dist(d)

    return FeatureVector(
        *(float(values[name]) for name in FEATURES), missing=frozenset(missing)
    )


FEATURE_CSV_HEADER = ["origin", "prefix", "ts", *FEATURES, "label"]


def feature_row(ann: Announcement, fv: FeatureVector, label: str | None = None) -> list:
    row = [ann.origin, str(ann.prefix), ann.timestamp, *fv.values()]
    row.append("" if label is None else label)
    return row
