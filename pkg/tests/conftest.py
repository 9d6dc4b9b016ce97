import ipaddress
import random

import pytest

from lov.rov import Announcement, Prefix, Status, Vrp


def oracle_status(vrps, origin, prefix):
    """Linear scan with the textbook rule, using ipaddress for containment."""
    net = ipaddress.ip_network(str(prefix))
    covering = [
        v for v in vrps
        if ipaddress.ip_network(str(v.prefix)).version == net.version
        and net.subnet_of(ipaddress.ip_network(str(v.prefix)))
    ]
    if not covering:
        return Status.UNKNOWN
    if any(v.asn == origin and net.prefixlen <= v.max_length for v in covering):
        return Status.VALID
    return Status.INVALID


def random_prefix(rng: random.Random, version=None, lo=8, hi=None) -> Prefix:
    version = version or rng.choice((4, 4, 6))
    width = 32 if version == 4 else 128
    hi = hi or (28 if version == 4 else 64)
    length = rng.randint(lo, hi)
    # keep values in a narrow range so covers happen often
    top = rng.getrandbits(10) << (width - 10)
    value = (top | rng.getrandbits(width - 10)) >> (width - length) << (width - length)
    return Prefix(version, value, length)


def random_vrp(rng: random.Random, asns=range(1, 30)) -> Vrp:
    p = random_prefix(rng)
    return Vrp(rng.choice(asns), p, rng.randint(p.length, min(p.length + 8, p.width)))


@pytest.fixture
def rng():
    return random.Random(1234)


def ann(origin, prefix, ts=0):
    return Announcement(Prefix.parse(prefix), (65000, origin), ts)


_MASKS = [((1 << 128) - 1) ^ ((1 << (128 - n)) - 1) for n in range(129)]


def _split128(x: int):
    return x >> 64, x & 0xFFFFFFFFFFFFFFFF


class ScanOracle:
    """Linear scan over all VRPs, vectorised with numpy.

    Every address is widened to 128 bits (IPv4 shifted into the top bits) and
    containment is a masked comparison of the two 64-bit halves.
    """

    def __init__(self, vrps):
        import numpy as np

        self.np = np
        vrps = list(vrps)
        self.n = len(vrps)
        wide = [self._widen(v.prefix) for v in vrps]
        self.fam = np.array([v.prefix.version for v in vrps], dtype=np.int8)
        self.hi = np.array([w[0] for w in wide], dtype=np.uint64)
        self.lo = np.array([w[1] for w in wide], dtype=np.uint64)
        self.plen = np.array([w[2] for w in wide], dtype=np.int64)
        self.asn = np.array([v.asn for v in vrps], dtype=np.int64)
        self.maxlen = np.array([v.max_length for v in vrps], dtype=np.int64)
        self.masks = [_split128(m) for m in _MASKS]
        self.mhi = np.array([m[0] for m in self.masks], dtype=np.uint64)
        self.mlo = np.array([m[1] for m in self.masks], dtype=np.uint64)
        self.vrps = vrps

    @staticmethod
    def _widen(prefix):
        shift = 128 - prefix.width
        hi, lo = _split128(prefix.value << shift)
        return hi, lo, prefix.length

    def covering_mask(self, prefix):
        np = self.np
        if self.n == 0:
            return np.zeros(0, dtype=bool)
        hi, lo, plen = self._widen(prefix)
        mh, ml = self.mhi[self.plen], self.mlo[self.plen]
        return (
            (self.fam == prefix.version)
            & (self.plen <= plen)
            & (((np.uint64(hi) ^ self.hi) & mh) == 0)
            & (((np.uint64(lo) ^ self.lo) & ml) == 0)
        )

    def status(self, origin, prefix):
        m = self.covering_mask(prefix)
        if not m.any():
            return Status.UNKNOWN
        ok = m & (self.asn == origin) & (self.maxlen >= prefix.length)
        return Status.VALID if ok.any() else Status.INVALID


def simpson_sf(z: float, n: int = 2000) -> float:
    """Upper normal tail by Simpson integration of the density over [0, |z|].
    Deliberately avoids erf so it is independent of the code under test."""
    import math

    if math.isinf(z):
        return 0.0 if z > 0 else 1.0
    a = min(abs(z), 12.0)
    h = a / n
    pdf = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    s = pdf(0.0) + pdf(a)
    s += 4 * sum(pdf((2 * i - 1) * h) for i in range(1, n // 2 + 1))
    s += 2 * sum(pdf(2 * i * h) for i in range(1, n // 2))
    mass = s * h / 3
    return 0.5 - mass if z >= 0 else 0.5 + mass


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
