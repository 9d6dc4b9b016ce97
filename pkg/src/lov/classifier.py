"""Benign-conflict vs. hijack classifiers and their training protocol.

Four model families are implemented on numpy: CART decision trees (Gini),
random forests of those trees, k-nearest neighbours and Gaussian naive Bayes.
Labels are encoded 0 = benign conflict, 1 = hijack; every tie resolves to
hijack.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lov.features import FEATURES, FeatureVector

FORMAT_VERSION = 1
N_FEATURES = len(FEATURES)


class Label(enum.IntEnum):
    BENIGN = 0
    HIJACK = 1

    def __str__(self):
        return self.name.lower()


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    label: Label


def to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.features.values() for s in samples], dtype=float).reshape(-1, N_FEATURES)
    y = np.array([int(s.label) for s in samples], dtype=np.int64)
    return X, y


# -- model specs ---------------------------------------------------------------

FAMILIES = ("DT", "RF", "KNN", "NB")

DEFAULT_PARAMS = {
    "DT": {"max_depth": 10, "min_samples_leaf": 2},
    "RF": {
        "max_depth": 10,
        "min_samples_leaf": 2,
        "n_trees": 100,
        "max_features": math.ceil(math.sqrt(N_FEATURES)),
        "bootstrap": True,
    },
    "KNN": {"n_neighbors": 5},
    "NB": {"var_smoothing": 1e-9},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict = field(default_factory=dict, hash=False)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        merged = dict(DEFAULT_PARAMS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown {self.family} parameters: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    def to_json(self) -> dict:
        return {"family": self.family, "params": self.params, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(obj["family"], dict(obj["params"]), int(obj["seed"]))


# -- CART ------------------------------------------------------------------


class Tree:
    """Array-encoded binary tree.  ``feature[i] == -1`` marks a leaf;
    internal nodes send ``x[feature] <= threshold`` to the left child."""

    def __init__(self, feature, threshold, left, right, n_node, n_hijack, impurity):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.n_node = np.asarray(n_node, dtype=np.int64)
        self.n_hijack = np.asarray(n_hijack, dtype=np.int64)
        self.impurity = np.asarray(impurity, dtype=float)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def leaf_scores(self, X: np.ndarray) -> np.ndarray:
        """Hijack fraction of the leaf each row lands in."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.n_hijack[node] / self.n_node[node]

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            best = max(best, d)
            if self.feature[i] >= 0:
                stack.append((int(self.left[i]), d + 1))
                stack.append((int(self.right[i]), d + 1))
        return best

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def importances(self) -> np.ndarray:
        """Unnormalised weighted Gini decrease per feature."""
        out = np.zeros(N_FEATURES)
        total = self.n_node[0]
        for i in np.flatnonzero(self.feature >= 0):
            l, r = self.left[i], self.right[i]
            gain = (
                self.n_node[i] * self.impurity[i]
                - self.n_node[l] * self.impurity[l]
                - self.n_node[r] * self.impurity[r]
            ) / total
            out[self.feature[i]] += gain
        return out

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "n_node": self.n_node.tolist(),
            "n_hijack": self.n_hijack.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(**obj)


def _gini(n: int, h: int) -> float:
    if n == 0:
        return 0.0
    p = h / n
    return 2.0 * p * (1.0 - p)


def _best_split(X, y, idx, features, min_leaf):
    """Best (feature, threshold) by Gini over midpoints of sorted unique values.

    Maximises sum over children of sum_c n_c^2 / n_child, which is equivalent
    to minimising weighted child impurity.  Ties keep the earlier feature and
    the lower threshold.
    """
    n = len(idx)
    yy = y[idx]
    total_h = int(yy.sum())
    best = None
    best_score = -1.0
    positions = np.arange(1, n)
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        cum_h = np.cumsum(yy[order])
        ok = (xs_s[:-1] < xs_s[1:]) & (positions >= min_leaf) & (n - positions >= min_leaf)
        if not ok.any():
            continue
        nl = positions[ok]
        hl = cum_h[:-1][ok]
        nr = n - nl
        hr = total_h - hl
        score = (hl * hl + (nl - hl) ** 2) / nl + (hr * hr + (nr - hr) ** 2) / nr
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score = float(score[j])
            k = np.flatnonzero(ok)[j]
            best = (int(f), float((xs_s[k] + xs_s[k + 1]) / 2.0))
    return best


def build_tree(X, y, max_depth, min_samples_leaf, max_features=N_FEATURES, rng=None) -> Tree:
    n_features = X.shape[1]
    feature, threshold, left, right, n_node, n_hijack, impurity = ([] for _ in range(7))

    def new_node(idx):
        i = len(feature)
        h = int(y[idx].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        n_node.append(len(idx))
        n_hijack.append(h)
        impurity.append(_gini(len(idx), h))
        return i

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n, h = n_node[node], n_hijack[node]
        if depth >= max_depth or h == 0 or h == n or n < 2 * min_samples_leaf:
            continue
        if max_features >= n_features:
            feats = range(n_features)
        else:
            feats = np.sort(rng.choice(n_features, size=max_features, replace=False))
        split = _best_split(X, y, idx, feats, min_samples_leaf)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree gets the lower node ids
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(feature, threshold, left, right, n_node, n_hijack, impurity)


# -- estimators ----------------------------------------------------------------


class DecisionTree:
    family = "DT"

    def __init__(self, tree: Tree):
        self.tree = tree

    @classmethod
    def fit(cls, spec: ModelSpec, X, y):
        p = spec.params
        rng = np.random.default_rng(spec.seed)
        return cls(build_tree(X, y, p["max_depth"], p["min_samples_leaf"], N_FEATURES, rng))

    def scores(self, X):
        return self.tree.leaf_scores(X)

    def state(self):
        return {"tree": self.tree.to_json()}

    @classmethod
    def from_state(cls, state):
        return cls(Tree.from_json(state["tree"]))


class RandomForest:
    family = "RF"

    def __init__(self, trees: list[Tree]):
        self.trees = trees

    @classmethod
    def fit(cls, spec: ModelSpec, X, y):
        p = spec.params
        seeds = np.random.default_rng(spec.seed).integers(0, 2**63 - 1, size=p["n_trees"])
        trees = []
        n = len(y)
        for s in seeds:
            rng = np.random.default_rng(int(s))
            if p["bootstrap"]:
                idx = rng.integers(0, n, size=n)
                # a one-class bootstrap still yields a (single-leaf) tree
                Xb, yb = X[idx], y[idx]
            else:
                Xb, yb = X, y
            trees.append(
                build_tree(Xb, yb, p["max_depth"], p["min_samples_leaf"], p["max_features"], rng)
            )
        return cls(trees)

    def votes(self, X) -> np.ndarray:
        """Number of trees voting hijack (leaf fraction >= 0.5) per row."""
        v = np.zeros(len(X), dtype=np.int64)
        for t in self.trees:
            v += t.leaf_scores(X) >= 0.5
        return v

    def scores(self, X):
        return self.votes(X) / len(self.trees)

    def feature_importance(self) -> np.ndarray:
        acc = np.zeros(N_FEATURES)
        used = 0
        for t in self.trees:
            imp = t.importances()
            s = imp.sum()
            if s > 0:
                acc += imp / s
                used += 1
        if used == 0:
            return np.full(N_FEATURES, 1.0 / N_FEATURES)
        return acc / acc.sum()

    def state(self):
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_state(cls, state):
        return cls([Tree.from_json(t) for t in state["trees"]])


class KNearest:
    family = "KNN"

    def __init__(self, X, y, k):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.int64)
        self.k = int(k)

    @classmethod
    def fit(cls, spec: ModelSpec, X, y):
        return cls(X, y, spec.params["n_neighbors"])

    def scores(self, X, chunk=2048):
        k = min(self.k, len(self.y))
        out = np.empty(len(X))
        for start in range(0, len(X), chunk):
            block = X[start : start + chunk]
            d2 = ((block[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            # stable sort: equal distances resolve to the earlier training row
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[start : start + chunk] = self.y[nearest].mean(axis=1)
        return out

    def state(self):
        return {"X": self.X.tolist(), "y": self.y.tolist(), "k": self.k}

    @classmethod
    def from_state(cls, state):
        return cls(np.array(state["X"], dtype=float).reshape(-1, N_FEATURES), state["y"], state["k"])


class GaussianNB:
    family = "NB"

    def __init__(self, means, variances, log_priors):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)
        self.log_priors = np.asarray(log_priors, dtype=float)

    @classmethod
    def fit(cls, spec: ModelSpec, X, y):
        eps = spec.params["var_smoothing"] * float(np.var(X, axis=0).max())
        eps = max(eps, 1e-300)
        means, variances, priors = [], [], []
        for c in (0, 1):
            Xc = X[y == c]
            means.append(Xc.mean(axis=0))
            variances.append(Xc.var(axis=0) + eps)
            priors.append(math.log(len(Xc) / len(y)))
        return cls(means, variances, priors)

    def log_joint(self, X):
        out = []
        for c in (0, 1):
            var = self.variances[c]
            ll = -0.5 * (np.log(2 * np.pi * var) + (X - self.means[c]) ** 2 / var).sum(axis=1)
            out.append(self.log_priors[c] + ll)
        return np.stack(out, axis=1)

    def scores(self, X):
        lj = self.log_joint(X)
        m = lj.max(axis=1, keepdims=True)
        p = np.exp(lj - m)
        return p[:, 1] / p.sum(axis=1)

    def state(self):
        return {
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_priors": self.log_priors.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        return cls(state["means"], state["variances"], state["log_priors"])


ESTIMATORS = {cls.family: cls for cls in (DecisionTree, RandomForest, KNearest, GaussianNB)}


def fingerprint(X, y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.int8).tobytes())
    return h.hexdigest()


@dataclass
class TrainedModel:
    spec: ModelSpec
    estimator: object
    training_fingerprint: str
    tightness_weights: tuple[float, ...] | None = None

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, N_FEATURES)
        if len(X) == 0:
            return np.zeros(0)
        return self.estimator.scores(X)

    def predict_array(self, X) -> np.ndarray:
        return (self.scores(X) >= 0.5).astype(np.int64)

    def predict(self, fv: FeatureVector) -> tuple[Label, float]:
        score = float(self.scores([fv.values()])[0])
        return (Label.HIJACK if score >= 0.5 else Label.BENIGN), score

    def state_hash(self) -> str:
        blob = json.dumps(self.estimator.state(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> dict:
        return {
            "format": "lov-model",
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_json(),
            "training_fingerprint": self.training_fingerprint,
            "tightness_weights": (
                list(self.tightness_weights) if self.tightness_weights is not None else None
            ),
            "state": self.estimator.state(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        if obj.get("format") != "lov-model" or obj.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported model format {obj.get('format')!r} "
                f"version {obj.get('format_version')!r}"
            )
        spec = ModelSpec.from_json(obj["spec"])
        est = ESTIMATORS[spec.family].from_state(obj["state"])
        weights = obj.get("tightness_weights")
        return cls(spec, est, obj["training_fingerprint"], tuple(weights) if weights else None)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def train(spec: ModelSpec, X, y) -> TrainedModel:
    X = np.asarray(X, dtype=float).reshape(-1, N_FEATURES)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    est = ESTIMATORS[spec.family].fit(spec, X, y)
    return TrainedModel(spec, est, fingerprint(X, y))


def predict(model: TrainedModel, fv: FeatureVector) -> tuple[Label, float]:
    return model.predict(fv)


def feature_importance(model: TrainedModel) -> dict[str, float]:
    if not isinstance(model.estimator, RandomForest):
        raise TypeError("feature importance is defined for random forests only")
    return dict(zip(FEATURES, model.estimator.feature_importance().tolist()))


# -- data handling -------------------------------------------------------------


def oversample(X, y, target_count: int, seed: int):
    """Randomly duplicate minority-class rows until that class has
    ``target_count`` rows.  Original rows keep their order; copies follow."""
    y = np.asarray(y)
    counts = {c: int((y == c).sum()) for c in (0, 1)}
    if min(counts.values()) == 0:
        raise ValueError("both classes must be non-empty")
    minority = min(counts, key=lambda c: (counts[c], c))
    if target_count < counts[minority]:
        raise ValueError("target_count below minority class size")
    extra = target_count - counts[minority]
    if extra == 0:
        return np.asarray(X), y
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(y == minority)
    picks = pool[rng.integers(0, len(pool), size=extra)]
    return np.concatenate([X, np.asarray(X)[picks]]), np.concatenate([y, y[picks]])


def undersample(X, y, label: int, target_count: int, seed: int):
    """Keep a uniform random subset of ``target_count`` rows of one class."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(y == label)
    if target_count > len(pool):
        raise ValueError("target_count exceeds class size")
    keep_cls = np.sort(rng.choice(pool, size=target_count, replace=False))
    keep = np.sort(np.concatenate([np.flatnonzero(y != label), keep_cls]))
    return np.asarray(X)[keep], y[keep]


def split(X, y, ratio: float, seed: int):
    """Stratified train/test split; returns ``(X_train, y_train, X_test, y_test)``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in (0, 1):
        pool = rng.permutation(np.flatnonzero(y == c))
        n_train = math.floor(ratio * len(pool) + 0.5)
        train_idx.append(pool[:n_train])
        test_idx.append(pool[n_train:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    X = np.asarray(X)
    return X[tr], y[tr], X[te], y[te]


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row.  Rows are shuffled within class, classes laid end to
    end and dealt round-robin, so per-class and total fold sizes differ by
    at most one."""
    y = np.asarray(y)
    counts = [int((y == c).sum()) for c in (0, 1)]
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > min(counts):
        raise ValueError(f"k={k} exceeds smallest class size {min(counts)}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in (0, 1)])
    folds = np.empty(len(y), dtype=np.int64)
    folds[order] = np.arange(len(y)) % k
    return folds


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Confusion counts ``confusion[true][pred]`` and derived macro scores."""

    confusion: tuple[tuple[int, int], tuple[int, int]]

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Metrics":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        cm = tuple(
            tuple(int(((y_true == t) & (y_pred == p)).sum()) for p in (0, 1)) for t in (0, 1)
        )
        return cls(cm)

    def __add__(self, other: "Metrics") -> "Metrics":
        a, b = self.confusion, other.confusion
        return Metrics(tuple(tuple(a[i][j] + b[i][j] for j in (0, 1)) for i in (0, 1)))

    @property
    def total(self) -> int:
        return sum(map(sum, self.confusion))

    def precision(self, c: int) -> float:
        predicted = self.confusion[0][c] + self.confusion[1][c]
        return self.confusion[c][c] / predicted if predicted else 0.0

    def recall(self, c: int) -> float:
        actual = sum(self.confusion[c])
        return self.confusion[c][c] / actual if actual else 0.0

    def f1(self, c: int) -> float:
        p, r = self.precision(c), self.recall(c)
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def macro_precision(self) -> float:
        return (self.precision(0) + self.precision(1)) / 2

    @property
    def macro_recall(self) -> float:
        return (self.recall(0) + self.recall(1)) / 2

    @property
    def macro_f1(self) -> float:
        return (self.f1(0) + self.f1(1)) / 2

    @property
    def benign_accuracy(self) -> float:
        return self.recall(0)

    @property
    def hijack_accuracy(self) -> float:
        return self.recall(1)

    def summary(self) -> dict:
        return {
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "benign_accuracy": self.benign_accuracy,
            "hijack_accuracy": self.hijack_accuracy,
            "confusion": [list(r) for r in self.confusion],
        }


def cross_validate(spec: ModelSpec, X, y, k: int = 10, seed: int = 0) -> Metrics:
    """Stratified k-fold CV; metrics come from the pooled confusion counts."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_folds(y, k, seed)
    pooled = Metrics(((0, 0), (0, 0)))
    for f in range(k):
        test = folds == f
        model = train(spec, X[~test], y[~test])
        pooled = pooled + Metrics.from_predictions(y[test], model.predict_array(X[test]))
    return pooled


def evaluate_holdout(model: TrainedModel, X, y) -> Metrics:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty holdout set")
    return Metrics.from_predictions(y, model.predict_array(X))


# -- grid search ---------------------------------------------------------------

DEPTHS = tuple(range(3, 21, 2))
LEAVES = tuple(range(2, 21, 2))
NEIGHBORS = tuple(range(1, 21, 2))


def param_grid(family: str) -> list[dict]:
    if family in ("DT", "RF"):
        return [
            {"max_depth": d, "min_samples_leaf": l} for d, l in itertools.product(DEPTHS, LEAVES)
        ]
    if family == "KNN":
        return [{"n_neighbors": k} for k in NEIGHBORS]
    if family == "NB":
        return [{}]
    raise ValueError(f"unknown model family {family!r}")


def _preference(params: dict):
    # regularisation preference among equal scores
    return (
        -params.get("max_depth", 0),
        params.get("min_samples_leaf", 0),
        -params.get("n_neighbors", 0),
    )


@dataclass
class GridResult:
    spec: ModelSpec
    metrics: Metrics
    scores: list[tuple[dict, float]]


def grid_search(
    family: str,
    X,
    y,
    seed: int = 0,
    k: int = 10,
    grid: list[dict] | None = None,
    fixed: dict | None = None,
) -> GridResult:
    """Exhaustive search scored by ``cross_validate`` macro-F1.

    ``fixed`` holds parameters outside the grid (e.g. RF ``n_trees``).
    """
    grid = param_grid(family) if grid is None else grid
    best = None
    scores = []
    for point in grid:
        spec = ModelSpec(family, {**(fixed or {}), **point}, seed)
        m = cross_validate(spec, X, y, k=k, seed=seed)
        scores.append((point, m.macro_f1))
        key = (m.macro_f1, _preference(point))
        if best is None or key > best[0]:
            best = (key, spec, m)
    return GridResult(best[1], best[2], scores)
