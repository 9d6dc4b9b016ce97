import datetime as dt
import math
import random
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from conftest import simpson_sf
from lov.ingest import HegemonySeries
from lov.postanalyzer import (
    DAY,
    Z_95,
    InsufficientHistory,
    Verdict,
    VisibilityWindow,
    group_events,
    normal_sf,
    observed_at,
    persistence_check,
    verify,
    window,
    z_test,
)
from lov.rov import Prefix, RouteKey

T0 = 1664582400
BIN = 900


def series(values, origin=0, asn=7, t0=T0):
    return HegemonySeries(origin, asn, tuple(t0 + BIN * i for i in range(len(values))), tuple(values))


def test_window_sizes():
    s = series([0.1] * 60)
    t = T0 + 60 * BIN
    w = window(s, t)
    assert len(w.values) == 50 and not w.short
    short = window(series([0.1] * 10), T0 + 10 * BIN)
    assert len(short.values) == 10 and short.short
    with pytest.raises(InsufficientHistory):
        window(series([0.1] * 4), T0 + 4 * BIN)
    with pytest.raises(InsufficientHistory):
        window(series([]), T0)
    with pytest.raises(InsufficientHistory):
        window(None, T0)


def test_window_excludes_t():
    s = series([float(i) for i in range(60)])
    w = window(s, T0 + 55 * BIN)
    assert w.values == tuple(float(i) for i in range(5, 55))


def test_window_statistics_are_population():
    vals = [0.1, 0.2, 0.3, 0.4, 0.5, 0.9]
    w = VisibilityWindow.of(vals)
    assert w.mu == pytest.approx(statistics.fmean(vals))
    assert w.sigma == pytest.approx(statistics.pstdev(vals))


def test_z_examples():
    w = VisibilityWindow.of([0.0, 2.0])  # mu 1, sigma 1
    r = z_test(w, 6.0)
    assert r.z == 5.0 and r.anomalous
    assert r.p_right == pytest.approx(2.8665e-7, rel=1e-3)
    assert not z_test(w, 1.0).anomalous
    assert z_test(w, 1.0).p_right == pytest.approx(0.5)
    # the 95% quantile itself is not beyond the threshold
    assert z_test(w, 1.0 + 1.6448).anomalous is False
    assert z_test(w, 1.0 + 1.6450).anomalous is True


def test_flat_window():
    w = VisibilityWindow.of([0.2] * 10)
    assert z_test(w, 0.3).anomalous and z_test(w, 0.3).z == math.inf
    assert not z_test(w, 0.1).anomalous
    eq = z_test(w, 0.2)
    assert not eq.anomalous and math.isnan(eq.z)


def test_normal_sf_against_simpson():
    for z in (-3, -1, 0, 0.5, 1.6449, 2, 5):
        assert normal_sf(z) == pytest.approx(simpson_sf(z), abs=1e-9)
    assert normal_sf(Z_95) == pytest.approx(0.05, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=5, max_size=50),
    st.floats(0, 1),
)
def test_decision_matches_threshold_and_oracle(vals, obs):
    w = VisibilityWindow.of(vals)
    r = z_test(w, obs)
    if w.sigma == 0:
        assert r.anomalous == (obs > w.mu)
        return
    z = (obs - w.mu) / w.sigma
    if abs(z - Z_95) < 1e-9:
        return  # too close to call in floating point
    assert r.anomalous == (obs > w.mu + Z_95 * w.sigma)
    assert r.anomalous == (simpson_sf(z) < 0.05)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=5, max_size=50),
    st.floats(0, 1),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_affine_invariance(vals, obs, a, b):
    w = VisibilityWindow.of(vals)
    w2 = VisibilityWindow.of([a * v + b for v in vals])
    r1, r2 = z_test(w, obs), z_test(w2, a * obs + b)
    if w.sigma < 1e-9 or not math.isfinite(r1.z) or abs(r1.z - Z_95) < 1e-6:
        return
    assert r1.anomalous == r2.anomalous
    assert r2.z == pytest.approx(r1.z, rel=1e-6, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=50), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_observation(vals, a, b):
    w = VisibilityWindow.of(vals)
    lo, hi = sorted((a, b))
    if z_test(w, lo).anomalous:
        assert z_test(w, hi).anomalous


def baseline(n=60, level=0.1, seed=0, noise=0.005):
    rng = random.Random(seed)
    return [level + rng.uniform(-noise, noise) for _ in range(n)]


def test_verify_spike():
    vals = baseline() + [0.6] * 8 + baseline(40, seed=1)
    s = series(vals)
    t = T0 + 60 * BIN
    v = verify(s, t)
    assert v.verdict is Verdict.VERIFIED and v.z > 10


def test_verify_flat_and_rising():
    s = series(baseline(100))
    assert verify(s, T0 + 60 * BIN).verdict is Verdict.UNVERIFIED
    # a slow drift buried in noise stays within the window's spread
    ramp = series([v + 0.0001 * i for i, v in enumerate(baseline(100, noise=0.02, seed=4))])
    assert verify(ramp, T0 + 60 * BIN).verdict is Verdict.UNVERIFIED


def test_verify_missing_data():
    assert verify(None, T0).verdict is Verdict.UNVERIFIED
    short = series(baseline(3))
    assert math.isnan(verify(short, T0 + 3 * BIN).z)
    # history but nothing at or after t
    s = series(baseline(20))
    assert verify(s, T0 + 30 * BIN).verdict is Verdict.UNVERIFIED


def test_observed_is_first_sample_at_or_after():
    s = series([0.0, 1.0, 2.0])
    assert observed_at(s, T0 + BIN) == (T0 + BIN, 1.0)
    assert observed_at(s, T0 + BIN + 1) == (T0 + 2 * BIN, 2.0)
    assert observed_at(s, T0 + 3 * BIN) is None


def test_persistence_new_policy():
    per_day = DAY // BIN
    step = baseline() + [0.5] * (per_day + 10)
    s = series(step)
    t = T0 + 60 * BIN
    assert persistence_check(s, t)
    assert verify(s, t).verdict is Verdict.NEW_POLICY
    assert verify(s, t, check_persistence=False).verdict is Verdict.VERIFIED


def test_persistence_requires_all_samples():
    per_day = DAY // BIN
    vals = baseline() + [0.5] * per_day
    vals[60 + per_day // 2] = 0.1  # visibility drops back once
    s = series(vals + baseline(10, seed=3))
    assert not persistence_check(s, T0 + 60 * BIN)
    assert not persistence_check(None, T0)
    # nothing after t
    assert not persistence_check(series(baseline()), T0 + 59 * BIN)


def test_group_events():
    a = RouteKey(7, Prefix.parse("10.0.0.0/24"))
    b = RouteKey(7, Prefix.parse("10.0.1.0/24"))
    c = RouteKey(8, Prefix.parse("10.0.0.0/24"))
    ev = group_events([(a, T0), (b, T0 + 3600), (c, T0), (a, T0 + DAY)])
    assert [(e.origin, e.date, len(e.routes)) for e in ev] == [
        (7, dt.date(2022, 10, 1), 2),
        (8, dt.date(2022, 10, 1), 1),
        (7, dt.date(2022, 10, 2), 1),
    ]
    assert group_events([]) == []
