"""Hijack verification from jumps in the suspect origin's global AS hegemony."""

from __future__ import annotations

import bisect
import datetime as dt
import enum
import math
import statistics
from dataclasses import dataclass
from typing import Iterable

from lov.ingest import HegemonySeries
from lov.rov import RouteKey

WINDOW_SIZE = 50
MIN_HISTORY = 5
ALPHA = 0.05
Z_95 = 1.6448536269514722  # standard normal 0.95 quantile
DAY = 86400


class InsufficientHistory(Exception):
    pass


@dataclass(frozen=True)
class VisibilityWindow:
    values: tuple[float, ...]
    mu: float
    sigma: float
    short: bool = False

    @classmethod
    def of(cls, values: Iterable[float], size: int = WINDOW_SIZE) -> "VisibilityWindow":
        values = tuple(values)
        if not values:
            raise InsufficientHistory("empty window")
        return cls(
            values, statistics.fmean(values), statistics.pstdev(values), len(values) < size
        )


def window(
    series: HegemonySeries | None, t: int, size: int = WINDOW_SIZE, min_samples: int = MIN_HISTORY
) -> VisibilityWindow:
    """Up to ``size`` samples strictly before ``t``, oldest first."""
    if series is None:
        raise InsufficientHistory("no hegemony series")
    _, values = series.before(t)
    values = values[-size:]
    if len(values) < min_samples:
        raise InsufficientHistory(f"{len(values)} samples before t")
    return VisibilityWindow.of(values, size)


def normal_sf(z: float) -> float:
    """Upper tail 1 - Phi(z)."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class ZTest:
    z: float
    p_right: float
    anomalous: bool


def z_test(win: VisibilityWindow, observed: float, alpha: float = ALPHA) -> ZTest:
    """Right-tailed Z-test of ``observed`` against the window's normal fit.

    A flat window (sigma == 0) is anomalous iff ``observed`` exceeds its mean;
    z is then +/-inf (or nan when equal).
    """
    if win.sigma == 0.0:
        diff = observed - win.mu
        if diff > 0:
            return ZTest(math.inf, 0.0, True)
        if diff < 0:
            return ZTest(-math.inf, 1.0, False)
        return ZTest(math.nan, 1.0, False)
    z = (observed - win.mu) / win.sigma
    p = normal_sf(z)
    return ZTest(z, p, p < alpha)


class Verdict(enum.Enum):
    VERIFIED = "verified"
    UNVERIFIED = "unverified"
    NEW_POLICY = "new_policy"


@dataclass(frozen=True)
class Verification:
    verdict: Verdict
    z: float
    p_right: float
    short_window: bool = False


def observed_at(series: HegemonySeries, t: int) -> tuple[int, float] | None:
    """First sample at or after ``t``."""
    i = bisect.bisect_left(series.times, t)
    if i == len(series.times):
        return None
    return series.times[i], series.values[i]


def persistence_check(
    series: HegemonySeries | None,
    t: int,
    horizon: int = DAY,
    alpha: float = ALPHA,
    win: VisibilityWindow | None = None,
) -> bool:
    """True iff every sample in (t, t + horizon] is anomalous against the
    pre-``t`` window, i.e. visibility settled at a new level."""
    if series is None:
        return False
    if win is None:
        try:
            win = window(series, t)
        except InsufficientHistory:
            return False
    lo = bisect.bisect_right(series.times, t)
    hi = bisect.bisect_right(series.times, t + horizon)
    hits = series.values[lo:hi]
    if not hits:
        return False
    return all(z_test(win, v, alpha).anomalous for v in hits)


def verify(
    series: HegemonySeries | None,
    t: int,
    alpha: float = ALPHA,
    check_persistence: bool = True,
) -> Verification:
    try:
        win = window(series, t)
    except InsufficientHistory:
        return Verification(Verdict.UNVERIFIED, math.nan, math.nan)
    obs = observed_at(series, t)
    if obs is None:
        return Verification(Verdict.UNVERIFIED, math.nan, math.nan, win.short)
    obs_t, value = obs
    res = z_test(win, value, alpha)
    if not res.anomalous:
        return Verification(Verdict.UNVERIFIED, res.z, res.p_right, win.short)
    if check_persistence and persistence_check(series, obs_t, alpha=alpha, win=win):
        return Verification(Verdict.NEW_POLICY, res.z, res.p_right, win.short)
    return Verification(Verdict.VERIFIED, res.z, res.p_right, win.short)


@dataclass(frozen=True)
class HijackEvent:
    origin: int
    date: dt.date
    routes: tuple[RouteKey, ...]


def utc_day(ts: int) -> dt.date:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).date()


def group_events(routes: Iterable[tuple[RouteKey, int]]) -> list[HijackEvent]:
    """Partition (route, timestamp) pairs by (origin, UTC day)."""
    groups: dict[tuple[dt.date, int], set[RouteKey]] = {}
    for key, ts in routes:
        groups.setdefault((utc_day(ts), key.origin), set()).add(key)
    return [
        HijackEvent(origin, day, tuple(sorted(keys)))
        for (day, origin), keys in sorted(groups.items())
    ]
