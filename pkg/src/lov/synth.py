"""Synthetic ground truth shaped like real benign conflicts and hijacks.

Feature vectors are drawn per root cause:

* deaggregation: the BGP origin holds the covering ROA, so OriginMatch,
  Parent and MOAS are all set; often also registered in an IRR.
* dependencies: provider/customer link and/or local hegemony between the
  two origins.
* multi-origins: distinct ASes of one organisation (MOAS).
* delayed ROAs: only an IRR route object vouches for the route.

Benign routes mostly sit close to the ROA holder; a share of them is far
away because geolocation of the origin's other prefixes is noisy.  Hijacks
carry no relation (rare spurious PC / IRR hits) and are usually far away,
with a close-proximity minority (30%).  Hegemony data is often absent.

``make_ground_truth`` mirrors the imbalanced collection procedure: a large
benign pool and a small hijack pool, each with 5% of its rows mislabeled
(drawn from the other class), then benign is subsampled and hijack
oversampled to a 1:1 set.
"""

from __future__ import annotations

import math

import numpy as np

from lov.classifier import oversample, undersample
from lov.features import f_as_dist

CAUSES = ("deaggregation", "dependencies", "multi_origins", "delayed_roas")
CAUSE_WEIGHTS = (0.55, 0.25, 0.10, 0.10)
DEPEN_MISSING = 0.35
HIJACK_NEAR = 0.3


def _distance(rng, near_p: float, far_km: float) -> float:
    """Median origin distance in km.  "Near" origins usually geolocate to the
    same city (exactly 0 km); far ones are log-normal around ``far_km``."""
    if rng.random() < near_p:
        return 0.0 if rng.random() < 0.8 else float(rng.exponential(0.5))
    return float(rng.lognormal(math.log(far_km), 1.0))


def benign_vector(rng, cause: str | None = None) -> list[float]:
    if cause is None:
        cause = CAUSES[rng.choice(len(CAUSES), p=CAUSE_WEIGHTS)]
    om = pc = moas = parent = alt = depen = 0.0
    if cause == "deaggregation":
        om = parent = moas = 1.0
        alt = float(rng.random() < 0.5)
        d = _distance(rng, 0.85, 300.0)
    elif cause == "dependencies":
        pc = float(rng.random() < 0.75)
        if not pc or rng.random() < 0.4:
            depen = float(rng.uniform(0.2, 1.0))
        alt = float(rng.random() < 0.3)
        d = _distance(rng, 0.5, 300.0)
    elif cause == "multi_origins":
        moas = 1.0
        pc = float(rng.random() < 0.2)
        if rng.random() >= DEPEN_MISSING:
            depen = float(rng.uniform(0.0, 0.5))
        alt = float(rng.random() < 0.4)
        d = _distance(rng, 0.6, 500.0)
    elif cause == "delayed_roas":
        alt = 1.0
        d = _distance(rng, 0.3, 800.0)
    else:
        raise ValueError(f"unknown cause {cause!r}")
    return [om, pc, moas, parent, depen, alt, f_as_dist(d)]


def hijack_vector(rng) -> list[float]:
    pc = alt = 0.0
    # at most one spurious relation, from a single stale data source
    r = rng.random()
    if r < 0.02:
        pc = 1.0
    elif r < 0.04:
        alt = 1.0
    if rng.random() < 0.15:
        as_dist = 1.0  # unlocatable
    else:
        as_dist = f_as_dist(_distance(rng, HIJACK_NEAR, 3000.0))
    return [0.0, pc, 0.0, 0.0, 0.0, alt, as_dist]


def benign_set(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([benign_vector(rng) for _ in range(n)], dtype=float).reshape(-1, 7)


def hijack_set(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([hijack_vector(rng) for _ in range(n)], dtype=float).reshape(-1, 7)


def make_ground_truth(
    seed: int = 0,
    n_benign_pool: int = 9223,
    n_hijack_pool: int = 415,
    per_class: int = 2000,
    label_noise: float = 0.05,
):
    """Balanced ``(X, y)`` with ``per_class`` rows per label.

    Returns the rows in shuffled order; ``y`` is 0 for benign, 1 for hijack.
    """
    rng = np.random.default_rng(seed)
    Xb = benign_set(n_benign_pool, int(rng.integers(2**31)))
    Xh = hijack_set(n_hijack_pool, int(rng.integers(2**31)))
    # label noise: a share of each pool is really drawn from the other class
    nb = int(round(label_noise * n_benign_pool))
    nh = int(round(label_noise * n_hijack_pool))
    Xb[rng.choice(n_benign_pool, size=nb, replace=False)] = hijack_set(nb, int(rng.integers(2**31)))
    Xh[rng.choice(n_hijack_pool, size=nh, replace=False)] = benign_set(nh, int(rng.integers(2**31)))
    X = np.concatenate([Xb, Xh])
    y = np.concatenate([np.zeros(len(Xb), dtype=np.int64), np.ones(len(Xh), dtype=np.int64)])
    X, y = undersample(X, y, 0, per_class, int(rng.integers(2**31)))
    X, y = oversample(X, y, per_class, int(rng.integers(2**31)))
    order = rng.permutation(len(y))
    return X[order], y[order]
