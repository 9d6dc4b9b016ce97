"""A synthetic multi-day replay corpus with hand-labeled fixture routes.

Background: a few thousand ASes with /20 blocks (some v6 /32s), ROAs for most
of them, a provider/customer hierarchy, IRR objects and geolocation.  Each day
every background route is announced from several collector peers, padded to
``per_day`` announcements.  All background routes are Valid or Unknown.

Fixtures (RPKI-invalid on purpose):

* ``benign_fastpath``: deaggregation, provider/customer and sibling-MOAS
  routes announced every day, co-located with the ROA holder and registered
  in the IRR.  Tight enough for the fast path.
* ``benign_monitored``: delayed-ROA style routes (IRR only, far away), also
  announced every day.  Low tightness, so they wait for behavior monitoring.
* ``hijack_verified``: one-day hijacks whose origin's global hegemony spikes.
* ``hijack_unverified``: two-day hijacks by origins without hegemony data.
* ``hijack_new_policy``: the origin's hegemony steps up and stays there.
* ``hijack_bogon``: private-use origins, excluded before classification.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from lov.ingest import (
    GLOBAL,
    GeoIndex,
    HegemonyIndex,
    HegemonySeries,
    IrrIndex,
    RelGraph,
    RouteObject,
    SnapshotStore,
)
from lov.rov import Prefix, RoaIndex, Vrp

DAY = 86400
BIN = 900
START = dt.date(2022, 10, 1)

# (lat, lon) of a handful of metro areas
CITIES = (
    (40.71, -74.01), (51.51, -0.13), (50.11, 8.68), (52.37, 4.90), (35.68, 139.69),
    (1.35, 103.82), (-33.87, 151.21), (37.77, -122.42), (-23.55, -46.63), (55.76, 37.62),
    (19.08, 72.88), (39.90, 116.40), (-26.20, 28.05), (48.86, 2.35), (43.65, -79.38),
    (25.20, 55.27), (6.52, 3.38), (41.01, 28.98), (59.33, 18.07), (-34.60, -58.38),
)

FIXTURE_BASE = 50000
HIJACKER_BASE = 40000
BOGON_BASE = 64512


@dataclass
class Corpus:
    root: Path
    start: dt.date
    days: int
    labels: dict = field(default_factory=dict)

    @property
    def announcements_dir(self) -> Path:
        return self.root / "announcements"

    @property
    def snapshot_dir(self) -> Path:
        return self.root / "snapshots"

    def day_path(self, i: int) -> Path:
        return self.announcements_dir / f"{(self.start + dt.timedelta(days=i)).isoformat()}.jsonl"


def _v4(block: int, length: int = 20, sub: int = 0) -> Prefix:
    base = (20 << 24) + block * 4096
    return Prefix(4, base + sub * (1 << (32 - length)), length)


def _v6(i: int) -> Prefix:
    return Prefix(6, (0x2A00 << 112) | (i << 96), 32)


def _far_city(rng: random.Random, city: int) -> int:
    """A metro at least ~3000 km from ``city``."""
    from lov.features import great_circle_km

    while True:
        c = rng.randrange(len(CITIES))
        if great_circle_km(CITIES[c], CITIES[city]) > 3000:
            return c


def build_corpus(
    root,
    days: int = 14,
    per_day: int = 100_000,
    seed: int = 0,
    start: dt.date = START,
    n_as: int = 3000,
) -> Corpus:
    rng = random.Random(seed)
    root = Path(root)
    corpus = Corpus(root, start, days)
    corpus.announcements_dir.mkdir(parents=True, exist_ok=True)

    asns = list(range(1000, 1000 + n_as))
    city = {a: rng.randrange(len(CITIES)) for a in asns}
    owned: dict[int, list[Prefix]] = {}
    block = 0
    for i, a in enumerate(asns):
        ps = []
        for _ in range(rng.randint(1, 4)):
            ps.append(_v4(block))
            block += 1
        if rng.random() < 0.2:
            ps.append(_v6(i))
        owned[a] = ps
    signed = {a for a in asns if rng.random() < 0.6}
    # fixtures need ROA holders whose first block is a v4 /20 with an exact ROA
    holders = [a for a in asns[100:] if a in signed]
    rng.shuffle(holders)

    vrps = [Vrp(a, p, p.length) for a in sorted(signed) for p in owned[a]]
    rel = RelGraph()
    for i, a in enumerate(asns[1:], start=1):
        for prov in rng.sample(asns[: min(i, 50 + i // 10)], k=min(i, rng.randint(1, 2))):
            if prov != a and (a, prov) not in rel.p2c:
                rel.add_p2c(prov, a)
    for _ in range(n_as // 2):
        a, b = rng.sample(asns, 2)
        if not rel.is_pc(a, b):
            rel.add_peer(a, b)
    orgs = {a: f"ORG-{a}" for a in asns}
    irr = [RouteObject(p, a, "RADB") for a in asns for p in owned[a] if rng.random() < 0.5]
    geo = [(p, *CITIES[city[a]]) for a in asns for p in owned[a]]

    labels: dict[str, list] = {k: [] for k in (
        "benign_fastpath", "benign_monitored", "hijack_verified", "hijack_unverified",
        "hijack_new_policy", "hijack_bogon",
    )}
    daily: list[tuple[int, Prefix, set[int]]] = []  # (origin, prefix, days announced)
    local_heg: list[tuple[int, int, float]] = []
    global_heg: dict[int, object] = {}

    def take_holder():
        a = holders.pop()
        return a, owned[a][0]

    def fixture_route(cat, origin, prefix, on_days):
        daily.append((origin, prefix, set(on_days)))
        labels[cat].append([origin, str(prefix)])

    every = range(days)
    nxt = FIXTURE_BASE
    # deaggregation: the holder announces a /24 of its own /20
    for _ in range(15):
        a, p20 = take_holder()
        sub = _v4((p20.value - (20 << 24)) // 4096, 24, 1)
        irr.append(RouteObject(sub, a, "RADB"))
        fixture_route("benign_fastpath", a, sub, every)
    # provider/customer: a customer without ROA announces part of the provider's block
    for _ in range(15):
        prov, p20 = take_holder()
        cust = nxt
        nxt += 1
        rel.add_p2c(prov, cust)
        orgs[cust] = f"ORG-{cust}"
        sub = _v4((p20.value - (20 << 24)) // 4096, 24, 2)
        irr.append(RouteObject(sub, cust, "RADB"))
        local_heg.append((cust, prov, 0.9))
        fixture_route("benign_fastpath", cust, sub, every)
    # sibling MOAS: another AS of the holder's organisation
    for _ in range(10):
        a, p20 = take_holder()
        sib = nxt
        nxt += 1
        orgs[sib] = orgs[a]
        rel.add_peer(a, sib)
        sub = _v4((p20.value - (20 << 24)) // 4096, 24, 3)
        irr.append(RouteObject(sub, sib, "RADB"))
        fixture_route("benign_fastpath", sib, sub, every)
    # delayed ROA: only an IRR object, origin elsewhere with its own space
    for _ in range(10):
        a, p20 = take_holder()
        late = nxt
        nxt += 1
        orgs[late] = f"ORG-{late}"
        c = _far_city(rng, city[a])
        for _ in range(2):
            own = _v4(block)
            block += 1
            geo.append((own, *CITIES[c]))
            daily.append((late, own, set(every)))
        sub = _v4((p20.value - (20 << 24)) // 4096, 24, 4)
        irr.append(RouteObject(sub, late, "RADB"))
        fixture_route("benign_monitored", late, sub, every)

    def make_hijack(cat, h, victim, sub, on_days, n_own=3):
        nonlocal block
        c = _far_city(rng, city[victim])
        orgs[h] = f"ORG-{h}"
        rel.add_p2c(asns[rng.randrange(50)], h)
        for _ in range(n_own):
            own = _v4(block)
            block += 1
            geo.append((own, *CITIES[c]))
            daily.append((h, own, set(every)))
        p20 = owned[victim][0]
        target = _v4((p20.value - (20 << 24)) // 4096, 24, sub)
        fixture_route(cat, h, target, on_days)
        return target

    h_id = HIJACKER_BASE
    for i in range(8):
        v, _ = take_holder()
        day = (i * 2 + 1) % days
        target = make_hijack("hijack_verified", h_id, v, 5, [day])
        global_heg[h_id] = ("spike", day, target)
        h_id += 1
    for i in range(8):
        v, _ = take_holder()
        day = (i * 2 + 2) % max(days - 1, 1)
        make_hijack("hijack_unverified", h_id, v, 6, [day, day + 1])
        h_id += 1
    for i in range(2):
        v, _ = take_holder()
        day = (3 + i * 5) % days
        target = make_hijack("hijack_new_policy", h_id, v, 7, [day])
        global_heg[h_id] = ("step", day, target)
        h_id += 1
    for i in range(4):
        v, p20 = take_holder()
        sub = _v4((p20.value - (20 << 24)) // 4096, 24, 8)
        fixture_route("hijack_bogon", BOGON_BASE + i, sub, [i * 3 % days])

    # background ASes with hegemony data (steady, noisy)
    for a in asns[:50]:
        global_heg[a] = ("steady", None, None)

    # -- static snapshots on day 0, hegemony per day
    snaps = SnapshotStore(corpus.snapshot_dir)
    snaps.put("vrps", start, RoaIndex(vrps))
    snaps.put("as_rel", start, rel)
    snaps.put("as2org", start, orgs)
    snaps.put("irr", start, IrrIndex(irr))
    snaps.put("geo", start, GeoIndex(geo))

    peers = asns[:30]
    route_paths = []
    for a in asns:
        for p in owned[a]:
            route_paths.append((a, p, rng.choice(asns[:200])))

    # hijack announcement instants, bin aligned plus a few seconds
    for i in range(days):
        day_start = _epoch(start + dt.timedelta(days=i))
        ann_times = {}
        for origin, prefix, on in daily:
            if i in on:
                ann_times[(origin, prefix)] = day_start + rng.randrange(8, 80) * BIN + 30
        snaps.put("hegemony", start + dt.timedelta(days=i),
                  _hegemony_for_day(rng, day_start, global_heg, local_heg, ann_times, i))
        _write_day(corpus.day_path(i), rng, day_start, per_day, route_paths, daily, i,
                   ann_times, peers, asns)

    corpus.labels = labels
    (root / "labels.json").write_text(json.dumps(labels, indent=1, sort_keys=True))
    return corpus


def _epoch(d: dt.date) -> int:
    return int(dt.datetime(d.year, d.month, d.day, tzinfo=dt.timezone.utc).timestamp())


def _hegemony_for_day(rng, day_start, global_heg, local_heg, ann_times, i):
    t0, t1 = day_start - DAY, day_start + 2 * DAY
    times = tuple(range(t0, t1, BIN))
    series = []
    for asn in sorted(global_heg):
        kind, event_day, target = global_heg[asn]
        base = 0.002 + (asn % 7) * 0.0005
        vals = [base + rng.gauss(0, base * 0.05) for _ in times]
        if kind != "steady":
            t_ann = ann_times.get((asn, target)) if event_day == i else None
            if t_ann is None and kind == "step" and event_day < i:
                vals = [v * 10 for v in vals]
            elif t_ann is not None:
                hi = t_ann + (2 * 3600 if kind == "spike" else 10 * DAY)
                vals = [v * 10 if t_ann <= t < hi else v for t, v in zip(times, vals)]
        series.append(HegemonySeries(GLOBAL, asn, times, tuple(max(v, 0.0) for v in vals)))
    local_times = tuple(range(t0, t1, 4 * 3600))
    for origin, asn, level in local_heg:
        series.append(HegemonySeries(origin, asn, local_times, (level,) * len(local_times)))
    return HegemonyIndex(series)


def _write_day(path, rng, day_start, per_day, route_paths, daily, i, ann_times, peers, asns):
    lines = []
    fixtures = [(o, p) for o, p, on in daily if i in on]
    for origin, prefix in fixtures:
        t = ann_times[(origin, prefix)]
        for j in range(20):
            peer = peers[j]
            lines.append(_line(t + j * 7, peer, prefix, (peer, asns[60 + j], origin)))
    n_bg = max(per_day - len(lines), len(route_paths))
    for k in range(n_bg):
        origin, prefix, transit = route_paths[k % len(route_paths)]
        peer = peers[(k // len(route_paths) + k) % len(peers)]
        hops = (peer, origin) if peer in (transit, origin) else (peer, transit, origin)
        lines.append(_line(day_start + rng.randrange(DAY), peer, prefix, hops))
    rng.shuffle(lines)
    path.write_text("".join(lines))


def _line(ts, peer, prefix, hops) -> str:
    path = ",".join(str(h) for h in hops)
    return f'{{"ts":{ts},"peer_asn":{peer},"prefix":"{prefix}","as_path":[{path}]}}\n'
