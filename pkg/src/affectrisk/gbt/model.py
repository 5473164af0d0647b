"""Second-order gradient-boosted regression trees (squared error).

Exact greedy split search over sorted unique values, shrinkage, row and
column subsampling per tree, learned default directions for missing values
(NaN), optional early stopping on a holdout, and gain-based importance.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import EmptyMatrix, NonFiniteTarget, SchemaMismatch
from ._backend import get_kernels

FORMAT_NAME = "affectrisk.gbt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbtHyperparams:
    learning_rate: float = 0.05
    max_depth: int = 3
    subsample: float = 0.8
    colsample: float = 0.8
    n_estimators: int = 100
    early_stopping_rounds: int = 10
    l2_leaf: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0 < self.subsample <= 1 and 0 < self.colsample <= 1):
            raise ValueError("subsample and colsample must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_estimators < 0 or self.early_stopping_rounds < 1:
            raise ValueError("n_estimators must be >= 0 and early_stopping_rounds >= 1")
        if self.l2_leaf < 0 or self.min_child_weight < 0:
            raise ValueError("l2_leaf and min_child_weight must be nonnegative")

    def replace(self, **kw) -> "GbtHyperparams":
        return GbtHyperparams(**{**asdict(self), **kw})


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def apply(self, X, kernels=None) -> np.ndarray:
        k = kernels or get_kernels()
        return k.apply_tree(
            X, self.feature, self.threshold, self.default_left.view(np.uint8), self.left, self.right
        )

    def predict(self, X, kernels=None) -> np.ndarray:
        return self.value[self.apply(X, kernels)]


@dataclass
class TreeEnsemble:
    base_score: float
    learning_rate: float
    feature_names: list[str]
    trees: list[Tree] = field(default_factory=list)
    history: dict = field(default_factory=dict)

    def predict_matrix(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"expected {len(self.feature_names)} columns, got {X.shape[1]}")
        pred = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            pred += self.learning_rate * t.predict(X)
        return pred

    def to_json(self) -> dict:
        def node(t, i):
            if t.feature[i] < 0:
                return {"leaf": float(t.value[i])}
            return {
                "feature": self.feature_names[t.feature[i]],
                "threshold": float(t.threshold[i]),
                "default": "left" if t.default_left[i] else "right",
                "gain": float(t.gain[i]),
                "left": node(t, t.left[i]),
                "right": node(t, t.right[i]),
            }
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "features": list(self.feature_names),
            "trees": [node(t, 0) for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TreeEnsemble":
        if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported ensemble document")
        names = list(doc["features"])
        index = {n: i for i, n in enumerate(names)}
        trees = []
        for root in doc["trees"]:
            b = _TreeBuilder()
            stack = [(root, b.add())]
            while stack:
                nd, i = stack.pop()
                if "leaf" in nd:
                    b.value[i] = float(nd["leaf"])
                    continue
                li, ri = b.add(), b.add()
                b.set_split(i, index[nd["feature"]], float(nd["threshold"]),
                            nd["default"] == "left", float(nd["gain"]), li, ri)
                stack.append((nd["right"], ri))
                stack.append((nd["left"], li))
            trees.append(b.build())
        return cls(float(doc["base_score"]), float(doc["learning_rate"]), names, trees)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "TreeEnsemble":
        return cls.from_json(json.loads(text))


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.default_left = [], [], []
        self.left, self.right, self.value, self.gain = [], [], [], []

    def add(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def set_split(self, i, feat, thr, dleft, gain, li, ri):
        self.feature[i] = feat
        self.threshold[i] = thr
        self.default_left[i] = dleft
        self.gain[i] = gain
        self.left[i] = li
        self.right[i] = ri

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.intp),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.default_left, dtype=bool),
            np.array(self.left, dtype=np.intp),
            np.array(self.right, dtype=np.intp),
            np.array(self.value, dtype=np.float64),
            np.array(self.gain, dtype=np.float64),
        )


def _as_matrix(X) -> np.ndarray:
    if hasattr(X, "to_array"):
        X = X.to_array()
    return np.ascontiguousarray(X, dtype=np.float64)


def _presort(X):
    """Per-column stable sort (NaN last): row indices, values, non-missing counts."""
    sorted_idx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T).astype(np.intp, copy=False)
    sorted_vals = np.ascontiguousarray(np.take_along_axis(X, sorted_idx.T, axis=0).T)
    n_valid = np.ascontiguousarray((~np.isnan(X)).sum(axis=0), dtype=np.intp)
    return sorted_idx, sorted_vals, n_valid


def _grow_tree(X, sorted_idx, sorted_vals, n_valid, g, h, in_tree, cols, hp, kernels) -> Tree:
    b = _TreeBuilder()
    node_of = np.where(in_tree, 0, -1).astype(np.int64)
    level = [b.add()]
    for depth in range(hp.max_depth + 1):
        m = len(level)
        act = node_of >= 0
        G = np.bincount(node_of[act], weights=g[act], minlength=m)
        H = np.bincount(node_of[act], weights=h[act], minlength=m)
        if depth == hp.max_depth:
            for k, nid in enumerate(level):
                b.value[nid] = -G[k] / (H[k] + hp.l2_leaf)
            break
        col, thr, gain, dleft = kernels.find_splits(
            sorted_vals, sorted_idx, n_valid, g, h, node_of, m, cols, G, H, hp.l2_leaf, hp.min_child_weight
        )
        child_of = np.full((m, 2), -1, dtype=np.int64)
        nxt = []
        for k, nid in enumerate(level):
            if col[k] < 0:
                b.value[nid] = -G[k] / (H[k] + hp.l2_leaf)
                continue
            li, ri = b.add(), b.add()
            b.set_split(nid, int(col[k]), float(thr[k]), bool(dleft[k]), float(gain[k]), li, ri)
            child_of[k] = (len(nxt), len(nxt) + 1)
            nxt += [li, ri]
        if not nxt:
            break
        act_rows = np.nonzero(act)[0]
        k = node_of[act_rows]
        split = col[k] >= 0
        node_of[act_rows[~split]] = -1
        rows, k = act_rows[split], k[split]
        x = X[rows, col[k]]
        go_left = np.where(np.isnan(x), dleft[k], x < thr[k])
        node_of[rows] = np.where(go_left, child_of[k, 0], child_of[k, 1])
        level = nxt
    return b.build()


def _rmse(a, b) -> float:
    d = a - b
    return math.sqrt(float(np.dot(d, d)) / d.size)


def fit(
    X,
    y,
    hp: GbtHyperparams = GbtHyperparams(),
    feature_names: Sequence[str] | None = None,
    valid: tuple | None = None,
    backend: str | None = None,
) -> TreeEnsemble:
    """Fit a boosted ensemble to ``y``.

    ``X`` is a float array with NaN for missing values, or anything with a
    ``to_array()`` method (a FeatureMatrix).  ``valid=(X_valid, y_valid)``
    enables early stopping: boosting stops once holdout RMSE has not improved
    for ``hp.early_stopping_rounds`` rounds and the ensemble is truncated to
    the best round (possibly zero trees).
    """
    if feature_names is None and hasattr(X, "schema"):
        feature_names = X.schema
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] == 0:
        raise EmptyMatrix("need at least 2 rows and 1 column")
    if y.shape != (X.shape[0],):
        raise ValueError("target length does not match rows")
    if not np.all(np.isfinite(y)):
        raise NonFiniteTarget("target contains non-finite values")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise SchemaMismatch("feature_names length does not match columns")
    kernels = get_kernels(backend)

    n, F = X.shape
    base = float(y[0]) if np.all(y == y[0]) else math.fsum(y) / n
    ens = TreeEnsemble(base, hp.learning_rate, list(feature_names))
    sorted_idx, sorted_vals, n_valid = _presort(X)
    rng = np.random.default_rng(hp.seed)
    n_rows = max(1, int(round(hp.subsample * n)))
    n_cols = max(1, int(round(hp.colsample * F)))
    pred = np.full(n, base)
    h = np.ones(n)
    train_hist = [_rmse(pred, y)]

    if valid is not None:
        Xv = _as_matrix(valid[0])
        yv = np.asarray(valid[1], dtype=np.float64)
        vpred = np.full(Xv.shape[0], base)
        valid_hist = [_rmse(vpred, yv)] if yv.size else []
        best, best_round = (valid_hist[0], 0) if yv.size else (math.inf, 0)
    else:
        valid_hist = []

    for m in range(hp.n_estimators):
        rows = np.sort(rng.choice(n, n_rows, replace=False)) if n_rows < n else np.arange(n)
        cols = np.sort(rng.choice(F, n_cols, replace=False)) if n_cols < F else np.arange(F)
        in_tree = np.zeros(n, dtype=bool)
        in_tree[rows] = True
        g = pred - y
        tree = _grow_tree(X, sorted_idx, sorted_vals, n_valid, g, h, in_tree, cols.astype(np.intp), hp, kernels)
        ens.trees.append(tree)
        pred += hp.learning_rate * tree.predict(X, kernels)
        train_hist.append(_rmse(pred, y))
        if valid is not None and yv.size:
            vpred += hp.learning_rate * tree.predict(Xv, kernels)
            score = _rmse(vpred, yv)
            valid_hist.append(score)
            if score < best:
                best, best_round = score, m + 1
            elif m + 1 - best_round >= hp.early_stopping_rounds:
                break

    if valid is not None and yv.size:
        del ens.trees[best_round:]
        ens.history["best_round"] = best_round
    ens.history["train_rmse"] = train_hist
    ens.history["valid_rmse"] = valid_hist
    return ens


def predict(ensemble: TreeEnsemble, row) -> float:
    """Predict one row given as a mapping feature name -> value (None = missing)
    or as a sequence in schema order."""
    if isinstance(row, Mapping):
        index = {n: i for i, n in enumerate(ensemble.feature_names)}
        unknown = [k for k in row if k not in index]
        if unknown:
            raise SchemaMismatch(f"features not in schema: {unknown[:3]}")
        x = np.full((1, len(index)), np.nan)
        for k, v in row.items():
            if v is not None:
                x[0, index[k]] = v
    else:
        x = np.asarray(row, dtype=np.float64).reshape(1, -1)
    return float(ensemble.predict_matrix(x)[0])


def gain_importance(ensemble: TreeEnsemble) -> dict[str, float]:
    total = np.zeros(len(ensemble.feature_names))
    for t in ensemble.trees:
        split = t.feature >= 0
        np.add.at(total, t.feature[split], t.gain[split])
    s = total.sum()
    if s > 0:
        total = total / s
    return dict(zip(ensemble.feature_names, total.tolist()))


def best_split(g, h, values, l2: float = 1.0, min_child_weight: float = 1.0, backend: str | None = None):
    """Best single split of one column; ``(threshold, gain, default_left)`` or None.

    ``values`` may contain NaN for missing entries.  Rows with value below the
    threshold go left.
    """
    x = np.ascontiguousarray(np.asarray(values, dtype=np.float64).reshape(-1, 1))
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    sorted_idx, sorted_vals, n_valid = _presort(x)
    node_of = np.zeros(x.shape[0], dtype=np.int64)
    G = np.bincount(node_of, weights=g, minlength=1)
    H = np.bincount(node_of, weights=h, minlength=1)
    col, thr, gain, dleft = get_kernels(backend).find_splits(
        sorted_vals, sorted_idx, n_valid, g, h, node_of, 1, np.zeros(1, dtype=np.intp), G, H, l2, min_child_weight
    )
    if col[0] < 0:
        return None
    return float(thr[0]), float(gain[0]), bool(dleft[0])
