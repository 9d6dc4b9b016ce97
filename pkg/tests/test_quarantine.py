import datetime as dt
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from lov.features import FEATURES, FeatureVector
from lov.quarantine import (
    PURGE_DAYS,
    QUARANTINE_DAYS,
    T_THR,
    Cause,
    MonitoringIncomplete,
    Provenance,
    QuarantineEntry,
    Reason,
    State,
    TightnessWeights,
    WhitelistStore,
    behavior_ok,
    categorize_cause,
    export_denied_csv,
    export_whitelist_csv,
    export_whitelist_json,
    manual_decision,
    parse_whitelist_json,
    tightness,
    whitelist_check,
)
from lov.rov import Prefix, RouteKey, Status

D0 = dt.date(2022, 10, 1)
K = RouteKey(1272, Prefix.parse("193.2.35.0/24"))
UNIFORM = TightnessWeights.uniform()


def day(n):
    return D0 + dt.timedelta(days=n)


def fv(*vals):
    return FeatureVector.from_values(vals)


def dot_oracle(values, weights):
    signs = [1.0] * 6 + [-1.0]
    return sum(s * w * v for s, w, v in zip(signs, weights, values))


def random_weights(rng):
    raw = [rng.random() for _ in FEATURES]
    total = sum(raw)
    w = [r / total for r in raw]
    w[-1] = 1.0 - sum(w[:-1])
    return TightnessWeights(tuple(max(x, 0.0) for x in w)) if w[-1] >= 0 else UNIFORM


# -- tightness


def test_tightness_examples():
    w = TightnessWeights((0.3, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1))
    assert tightness(fv(1, 0, 1, 1, 0, 0, 0), w) == pytest.approx(0.6)
    assert tightness(fv(0, 0, 0, 0, 0, 0, 1), w) == pytest.approx(-0.1)
    assert tightness(fv(1, 1, 1, 1, 1, 1, 0), w) == pytest.approx(0.9)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32))
def test_tightness_dot_product(seed):
    rng = random.Random(seed)
    w = random_weights(rng)
    vals = [float(rng.random() < 0.5) for _ in range(4)] + [rng.random(), float(rng.random() < 0.5), rng.random()]
    assert tightness(fv(*vals), w) == pytest.approx(dot_oracle(vals, w.weights), abs=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        TightnessWeights((0.5,) * 7)
    with pytest.raises(ValueError):
        TightnessWeights((1.2, -0.2, 0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        TightnessWeights((1.0,))
    imp = dict(zip(FEATURES, (0.25, 0.25, 0.1, 0.1, 0.1, 0.1, 0.1)))
    assert TightnessWeights.from_importance(imp).weights[0] == 0.25


def test_fast_path_threshold():
    # all weight on Depen, so T equals that feature's value
    w = TightnessWeights((0, 0, 0, 0, 1.0, 0, 0))
    store = WhitelistStore()
    for i, (depen, admitted) in enumerate([(0.31, True), (0.3, True), (0.29, False)]):
        key = RouteKey(100 + i, K.prefix)
        e = store.admit(key, D0, Reason.CLASSIFIED_BENIGN)
        assert store.fast_path(e, fv(0, 0, 0, 0, depen, 0, 0), w, D0) is admitted
        assert store.check(key.origin, key.prefix) is admitted
    # no relations at all: T = -w6 < threshold
    e = store.admit(K, D0, Reason.CLASSIFIED_BENIGN)
    assert not store.fast_path(e, fv(0, 0, 0, 0, 0, 0, 1.0), UNIFORM, D0)
    assert e.tightness == pytest.approx(-1 / 7)


def test_fast_path_only_for_benign():
    store = WhitelistStore()
    e = store.admit(K, D0, Reason.UNVERIFIED_HIJACK)
    with pytest.raises(ValueError):
        store.fast_path(e, fv(1, 1, 1, 1, 1, 1, 0), UNIFORM, D0)


# -- behavior monitoring


def brute_behavior(entered, sightings, period=QUARANTINE_DAYS):
    ends = entered + dt.timedelta(days=period)
    inside = {d for d in sightings if entered <= d <= ends}
    if not inside or max(inside) < ends - dt.timedelta(days=7):
        return False
    start = entered
    while start + dt.timedelta(days=6) <= ends:
        window = {start + dt.timedelta(days=i) for i in range(7)}
        if len(window & inside) >= 2:
            return True
        start += dt.timedelta(days=1)
    return False


def test_behavior_examples():
    e = QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN, {day(0), day(3), day(13)})
    assert behavior_ok(e, day(14))
    # frequent but went quiet
    e = QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN, {day(0), day(1), day(2)})
    assert not behavior_ok(e, day(14))
    # recent but sparse
    e = QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN, {day(0), day(7), day(14)})
    assert not behavior_ok(e, day(14))
    assert not behavior_ok(QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN), day(14))
    with pytest.raises(MonitoringIncomplete):
        behavior_ok(e, day(13))


@settings(max_examples=1000, deadline=None)
@given(st.sets(st.integers(-3, 18), max_size=10))
def test_behavior_matches_window_enumeration(offsets):
    sightings = {day(o) for o in offsets}
    e = QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN, set(sightings))
    assert behavior_ok(e, day(20)) == brute_behavior(D0, sightings)


@settings(max_examples=200, deadline=None)
@given(st.sets(st.integers(0, 30), max_size=31), st.integers(0, 30))
def test_no_behavior_whitelist_before_day_14(offsets, until):
    store = WhitelistStore()
    store.admit(K, D0, Reason.CLASSIFIED_BENIGN)
    for n in range(until + 1):
        seen = [K] if n in offsets else []
        store.daily_update(day(n), {K: Status.INVALID}, seen)
        e = store.entries.get(K)
        if e is not None:
            assert e.provenance is Provenance.BEHAVIOR
            assert n >= QUARANTINE_DAYS and e.added >= day(14)


def test_behavior_path_through_daily_update():
    store = WhitelistStore()
    store.admit(K, D0, Reason.CLASSIFIED_BENIGN)
    for n in range(15):
        r = store.daily_update(day(n), {K: Status.INVALID}, [K])
        if n < 14:
            assert not store.check(K.origin, K.prefix)
    assert store.check(K.origin, K.prefix)
    assert r.added == [(K, "behavior_monitoring")]
    assert store.quarantine[K].state is State.WHITELISTED


def test_quiet_route_expires():
    store = WhitelistStore()
    store.admit(K, D0, Reason.UNVERIFIED_HIJACK)
    r = None
    for n in range(1, 15):
        r = store.daily_update(day(n), {}, [])
    assert r.expired == [K] and store.quarantine[K].state is State.EXPIRED
    # a later sighting starts a new quarantine
    again = store.admit(K, day(20), Reason.UNVERIFIED_HIJACK)
    assert again.state is State.PENDING and again.entered == day(20)


# -- deny set


def test_deny_blocks_everything():
    store = WhitelistStore()
    e = store.admit(K, D0, Reason.CLASSIFIED_BENIGN)
    store.fast_path(e, fv(1, 1, 1, 1, 1, 1, 0), UNIFORM, D0)
    assert store.check(K.origin, K.prefix)
    assert manual_decision(store, K, "deny", D0, "operator") is State.REJECTED
    assert not store.check(K.origin, K.prefix)
    assert not store.add(K, day(1), Provenance.FAST_PATH)
    assert manual_decision(store, K, "allow", day(1)) is State.REJECTED
    e2 = store.admit(K, day(30), Reason.CLASSIFIED_BENIGN)
    assert e2.state is State.REJECTED
    assert not store.fast_path(e2, fv(1, 1, 1, 1, 1, 1, 0), UNIFORM, day(30))
    for n in range(30, 50):
        store.daily_update(day(n), {K: Status.INVALID}, [K])
    assert not store.check(K.origin, K.prefix)
    assert "operator" in export_denied_csv(store)


def test_manual_allow():
    store = WhitelistStore()
    store.admit(K, D0, Reason.UNVERIFIED_HIJACK)
    assert manual_decision(store, K, "ALLOW", D0) is State.WHITELISTED
    assert store.entries[K].provenance is Provenance.MANUAL
    assert store.pending() == []
    with pytest.raises(ValueError):
        manual_decision(store, K, "maybe", D0)


# -- daily update


def test_purge_reasons():
    store = WhitelistStore()
    keys = [RouteKey(i, K.prefix) for i in range(1, 5)]
    for k in keys:
        store.add(k, D0, Provenance.MANUAL)
    statuses = {keys[0]: Status.VALID, keys[1]: Status.UNKNOWN, keys[2]: Status.INVALID}
    r = store.daily_update(day(1), statuses, keys[:3])
    assert sorted(why for _, why in r.purged) == ["resolved", "resolved"]
    # keys[3] never seen again: stale after more than 30 days
    r = store.daily_update(day(30), {}, [keys[2]])
    assert r.purged == []
    r = store.daily_update(day(31), {}, [keys[2]])
    assert r.purged == [(keys[3], "stale")]
    assert list(store.entries) == [keys[2]]


def test_whitelist_check_is_exact():
    store = WhitelistStore()
    store.add(K, D0, Provenance.MANUAL)
    assert whitelist_check(store, K.origin, K.prefix)
    assert not whitelist_check(store, K.origin, Prefix.parse("193.2.35.0/25"))
    assert not whitelist_check(store, K.origin, Prefix.parse("193.2.34.0/23"))
    assert not whitelist_check(store, 3215, K.prefix)


def _random_store(rng):
    store = WhitelistStore()
    keys = [RouteKey(rng.randint(1, 5), Prefix(4, rng.randrange(4) << 8, 24)) for _ in range(12)]
    for k in keys:
        op = rng.random()
        when = day(rng.randint(0, 40))
        if op < 0.4:
            store.add(k, when, rng.choice(list(Provenance)))
        elif op < 0.8:
            store.admit(k, when, rng.choice(list(Reason)))
        elif op < 0.9:
            store.manual_decision(k, False, when, "x")
    return store, keys


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_daily_update_idempotent_and_purge_correct(seed):
    rng = random.Random(seed)
    store, keys = _random_store(rng)
    date = day(rng.randint(40, 80))
    statuses = {k: rng.choice(list(Status)) for k in keys if rng.random() < 0.8}
    seen = [k for k in keys if rng.random() < 0.3]
    store.daily_update(date, statuses, seen)
    once = store.dumps()
    store.daily_update(date, statuses, seen)
    assert store.dumps() == once
    for k, e in store.entries.items():
        assert (date - e.last_seen).days <= PURGE_DAYS
        assert statuses.get(k) not in (Status.VALID, Status.UNKNOWN)
        assert k not in store.denied


# -- root causes


def test_categorize_cause():
    assert categorize_cause(fv(1, 0, 1, 1, 0, 0, 0)) == {Cause.DEAGGREGATION}
    assert categorize_cause(fv(0, 1, 0, 0, 0, 0, 0.9)) == {Cause.DEPENDENCIES}
    assert categorize_cause(fv(0, 0, 0, 0, 0.4, 0, 0.9)) == {Cause.DEPENDENCIES}
    assert categorize_cause(fv(0, 0, 1, 0, 0, 0, 0.9)) == {Cause.MULTI_ORIGINS}
    assert categorize_cause(fv(0, 0, 0, 0, 0, 1, 0.9)) == {Cause.DELAYED_ROAS}
    assert categorize_cause(fv(0, 1, 1, 0, 0, 0, 0.9)) == {Cause.DEPENDENCIES, Cause.MULTI_ORIGINS}
    assert categorize_cause(fv(0, 0, 0, 0, 0, 0, 0.0)) == {Cause.DEPENDENCIES}
    assert categorize_cause(fv(0, 0, 0, 0, 0, 0, 1.0)) == set()


# -- persistence and exports


def test_store_json_roundtrip(tmp_path):
    rng = random.Random(4)
    store, _ = _random_store(rng)
    store.generation = day(3)
    store.save(tmp_path / "s.json")
    back = WhitelistStore.load(tmp_path / "s.json")
    assert back.dumps() == store.dumps() and back.digest() == store.digest()
    with pytest.raises(ValueError):
        WhitelistStore.from_json({"format_version": 99})


def test_whitelist_exports():
    store = WhitelistStore()
    store.add(K, D0, Provenance.FAST_PATH)
    entries = list(store.entries.values())
    gen, back = parse_whitelist_json(export_whitelist_json(entries, D0))
    assert gen == D0 and back == entries
    csv_text = export_whitelist_csv(entries, D0)
    assert csv_text.splitlines()[1] == "origin,prefix,added,last_seen,provenance"
    assert "1272,193.2.35.0/24" in csv_text
    with pytest.raises(ValueError):
        parse_whitelist_json(json.dumps({"format_version": 0}))


def test_behavior_listed_examples():
    def ok(*days):
        return behavior_ok(QuarantineEntry(K, D0, Reason.CLASSIFIED_BENIGN, {day(d) for d in days}), day(14))

    assert ok(1, 3, 12)
    assert not ok(1)
    assert not ok(1, 2)


def test_allow_then_deny():
    store = WhitelistStore()
    assert store.manual_decision(K, True, D0) is State.WHITELISTED  # never quarantined
    assert store.manual_decision(K, False, D0) is State.REJECTED
    assert not store.check(K.origin, K.prefix)
    assert categorize_cause(fv(1, 1, 1, 1, 0, 0, 0)) == {Cause.DEAGGREGATION, Cause.DEPENDENCIES}
