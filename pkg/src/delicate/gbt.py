"""Gradient-boosted regression trees for binary classification.

Each stage fits a tree to the logistic-loss residuals ``y - sigmoid(F)``.
Splits maximize variance reduction of the residuals over exact midpoints
between sorted distinct values; leaves take a single Newton step
``sum(r) / sum(p * (1 - p))`` clamped to ``[-4, 4]``.
"""

import json
import math
import random
from dataclasses import asdict, dataclass

import numpy as np

from delicate.common import NIL
from delicate.features import FEATURE_NAMES, feature_matrix, featurize_block

MODEL_VERSION = 1
LEAF_CLAMP = 4.0
# sigmoid(+-34) stays strictly inside (0, 1) in float64
MAX_MARGIN = 34.0
_GAIN_EPS = 1e-12


class DegenerateTrainingError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: float = 0.01
    min_samples_split: float = 0.02
    n_estimators: int = 100
    block_size: int = 10
    c_neg_size: int = 5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("min_samples_leaf", "min_samples_split"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be a fraction in (0, 1), got {v}")
        for name in ("max_depth", "n_estimators", "block_size", "c_neg_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")


PRESETS = {
    "dz": Hyperparams(0.115, 11, 0.0155, 0.015, 350, 50, 10),
    "amd": Hyperparams(0.185, 14, 0.08, 0.02, 300, 20, 6),
    "all": Hyperparams(0.135, 8, 0.01, 0.037, 500, 50, 8),
}
NIL_THRESHOLDS = {"dz": 0.4, "amd": 0.2, "all": 0.4}


@dataclass
class Leaf:
    value: float

    def to_json(self):
        return {"leaf": self.value}


@dataclass
class Split:
    feature: int
    threshold: float
    gain: float
    left: object
    right: object

    def to_json(self):
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "gain": self.gain,
            "left": self.left.to_json(),
            "right": self.right.to_json(),
        }


def node_from_json(obj):
    if "leaf" in obj:
        return Leaf(float(obj["leaf"]))
    return Split(
        int(obj["feature"]),
        float(obj["threshold"]),
        float(obj["gain"]),
        node_from_json(obj["left"]),
        node_from_json(obj["right"]),
    )


def tree_depth(node):
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _predict_node(node, X, idx, out):
    while isinstance(node, Split):
        go_left = X[idx, node.feature] <= node.threshold
        _predict_node(node.left, X, idx[go_left], out)
        node, idx = node.right, idx[~go_left]
    out[idx] = node.value


def predict_tree(node, X):
    out = np.empty(X.shape[0])
    _predict_node(node, X, np.arange(X.shape[0]), out)
    return out


def sigmoid(z):
    z = np.clip(z, -MAX_MARGIN, MAX_MARGIN)
    return 1.0 / (1.0 + np.exp(-z))


def logistic_loss(y, margin):
    p = sigmoid(margin)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


class GbtModel:
    def __init__(self, trees, learning_rate, base_score, feature_names=FEATURE_NAMES,
                 seed=0, hyperparams=None):
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)
        self.base_score = float(base_score)
        self.feature_names = tuple(feature_names)
        self.seed = int(seed)
        self.hyperparams = hyperparams

    @property
    def n_features(self):
        return len(self.feature_names)

    def _matrix(self, X):
        if hasattr(X, "as_array"):
            X = X.as_array()
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, single

    def decision_function(self, X, n_trees=None):
        X, single = self._matrix(X)
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees[:n_trees]:
            margin += self.learning_rate * predict_tree(tree, X)
        return float(margin[0]) if single else margin

    def predict_proba(self, X):
        """Probability that each row is a correct (mention, entity) pair."""
        p = sigmoid(self.decision_function(X))
        return float(p) if np.ndim(p) == 0 else p

    def to_json(self):
        return {
            "version": MODEL_VERSION,
            "feature_names": list(self.feature_names),
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "seed": self.seed,
            "hyperparams": asdict(self.hyperparams) if self.hyperparams else None,
            "trees": [t.to_json() for t in self.trees],
        }

    def dumps(self):
        return json.dumps(self.to_json(), separators=(",", ":"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
            fh.write("\n")

    @classmethod
    def from_json(cls, obj):
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        hp = obj.get("hyperparams")
        return cls(
            trees=[node_from_json(t) for t in obj["trees"]],
            learning_rate=obj["learning_rate"],
            base_score=obj["base_score"],
            feature_names=obj["feature_names"],
            seed=obj.get("seed", 0),
            hyperparams=Hyperparams(**hp) if hp else None,
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def predict_proba(model, x):
    return model.predict_proba(x)


def _count(fraction, n, floor):
    return max(floor, math.ceil(fraction * n - 1e-9))


def _best_split(Xn, rn, min_leaf):
    m, n_feat = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    left_sum = np.cumsum(rn[order], axis=0)[:-1]
    total = rn.sum()
    n_left = np.arange(1, m)[:, None]
    n_right = m - n_left
    gains = left_sum ** 2 / n_left + (total - left_sum) ** 2 / n_right - total ** 2 / m
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)
    best = gains.max()
    if best <= _GAIN_EPS:
        return None
    # lowest feature, then lowest threshold, among (near-)equal gains
    near = gains >= best - _GAIN_EPS * max(1.0, abs(best))
    feature, pos = np.argwhere(near.T)[0]
    lo, hi = xs[pos, feature], xs[pos + 1, feature]
    threshold = (lo + hi) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return int(feature), float(threshold), float(gains[pos, feature])


def _grow(X, r, h, idx, depth, hp, min_leaf, min_split):
    m = len(idx)
    if depth < hp.max_depth and m >= min_split and m >= 2 * min_leaf:
        found = _best_split(X[idx], r[idx], min_leaf)
        if found is not None:
            feature, threshold, gain = found
            go_left = X[idx, feature] <= threshold
            return Split(
                feature, threshold, gain,
                _grow(X, r, h, idx[go_left], depth + 1, hp, min_leaf, min_split),
                _grow(X, r, h, idx[~go_left], depth + 1, hp, min_leaf, min_split),
            )
    hess = h[idx].sum()
    value = r[idx].sum() / hess if hess > 0 else 0.0
    return Leaf(float(min(max(value, -LEAF_CLAMP), LEAF_CLAMP)))


def fit(X, y, hp, feature_names=FEATURE_NAMES, seed=0):
    """Fit a boosted ensemble on ``X`` (n x features) and binary labels ``y``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per label")
    if X.shape[1] != len(feature_names):
        raise ValueError(f"X has {X.shape[1]} columns but {len(feature_names)} feature names")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    n = len(y)
    prior = y.mean() if n else 0.0
    if n < 2 or prior in (0.0, 1.0):
        raise DegenerateTrainingError("training data must contain both positive and negative rows")

    base = math.log(prior / (1.0 - prior))
    min_leaf = _count(hp.min_samples_leaf, n, 1)
    min_split = _count(hp.min_samples_split, n, 2)
    margin = np.full(n, base)
    all_idx = np.arange(n)
    trees = []
    for _ in range(hp.n_estimators):
        p = sigmoid(margin)
        tree = _grow(X, y - p, p * (1.0 - p), all_idx, 0, hp, min_leaf, min_split)
        trees.append(tree)
        margin += hp.learning_rate * predict_tree(tree, X)
    return GbtModel(trees, hp.learning_rate, base, feature_names, seed, hp)


def gain_importance(model):
    """Summed split gain per feature, normalized to sum to one."""
    totals = np.zeros(model.n_features)
    stack = list(model.trees)
    while stack:
        node = stack.pop()
        if isinstance(node, Split):
            totals[node.feature] += node.gain
            stack.extend((node.left, node.right))
    s = totals.sum()
    if s > 0:
        totals = totals / s
    return dict(zip(model.feature_names, totals.tolist()))


@dataclass(frozen=True)
class TrainingRow:
    mention_id: str
    entity_id: int
    features: object
    label: int


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def even_spread(n, c):
    """Indices of ``c`` picks spread evenly over ``n`` sorted items."""
    if c <= 0 or n == 0:
        return []
    if c >= n:
        return list(range(n))
    if c == 1:
        return [_round_half_up((n - 1) / 2)]
    return [_round_half_up(i * (n - 1) / (c - 1)) for i in range(c)]


def sample_training_pairs(blocks, c_neg_size, seed=0):
    """Label one positive and up to ``c_neg_size`` negatives per block.

    ``blocks`` yields ``(mention, candidates, gold)``. Negatives are sorted by
    L2 distance and picked evenly from easiest to hardest; equal distances
    are ordered by a seeded draw.
    """
    rng = random.Random(seed)
    rows = []
    for mention, candidates, gold in blocks:
        if not candidates:
            continue
        fvs = featurize_block(mention, candidates)
        draws = [rng.random() for _ in candidates]
        linkable = gold is not None and gold != NIL
        pos = None
        negs = []
        for i, c in enumerate(candidates):
            if linkable and c.qid == gold:
                if pos is None:
                    pos = i
            else:
                negs.append(i)
        negs.sort(key=lambda i: (candidates[i].l2, draws[i]))
        key = mention.key
        if pos is not None:
            rows.append(TrainingRow(key, candidates[pos].entity_id, fvs[pos], 1))
        for j in even_spread(len(negs), c_neg_size):
            i = negs[j]
            rows.append(TrainingRow(key, candidates[i].entity_id, fvs[i], 0))
    return rows


def rows_to_arrays(rows):
    X = feature_matrix([r.features for r in rows])
    y = np.array([r.label for r in rows], dtype=np.int64)
    return X, y
