"""Histogram-based decision trees and the three estimators built on them.

Trees are grown level by level on quantile-binned features. Every node keeps
the sums ``G`` (of gradients or weighted targets) and ``H`` (of hessians or
weights); a split maximizes ``G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)`` and a
leaf predicts ``G/(H+λ)``. With ``G = Σ w·y``, ``H = Σ w`` and ``λ = 0`` this
is weighted least squares (Gini impurity for 0/1 targets); with negative
gradients and hessians of a loss it is a second-order boosting step.

Thresholds are stored in raw feature units, so a fitted tree needs no binner
at prediction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

__all__ = ["Tree", "Forest", "RandomForest", "GradientBoosting", "KNeighbors", "estimator_from_dict"]

_GAIN_RTOL = 1e-12


def _bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    uniq = np.unique(column)
    if uniq.size <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(qs)


class _Binned:
    """Feature codes with ``code <= k`` iff ``x <= edges[k]``."""

    def __init__(self, X: np.ndarray, max_bins: int):
        self.edges = [_bin_edges(X[:, f], max_bins) for f in range(X.shape[1])]
        self.codes = np.column_stack(
            [np.searchsorted(e, X[:, f], side="left") for f, e in enumerate(self.edges)]
        ).astype(np.int64)
        self.n_bins = [e.size + 1 for e in self.edges]


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=int)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )


def grow_tree(
    binned: _Binned,
    g: np.ndarray,
    h: np.ndarray,
    count: np.ndarray,
    *,
    max_depth: int | None,
    min_leaf: float,
    l2: float = 0.0,
    min_hessian: float = 0.0,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one tree on per-sample statistics ``g``, ``h`` and multiplicities ``count``."""
    codes = binned.codes
    n_feat = codes.shape[1]
    idx = np.flatnonzero(count > 0)
    g, h, count, codes = g[idx], h[idx], count[idx], codes[idx]
    node_of = np.zeros(idx.size, dtype=np.int64)  # position within the current level

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    level = [0]  # global node ids at the current depth
    depth = 0
    G_tot = np.array([g.sum()])
    H_tot = np.array([h.sum()])
    C_tot = np.array([count.sum()])
    value[0] = G_tot[0] / (H_tot[0] + l2) if H_tot[0] + l2 > 0 else 0.0

    while level and (max_depth is None or depth < max_depth):
        L = len(level)
        parent = G_tot**2 / np.maximum(H_tot + l2, 1e-300)
        best_gain = np.zeros(L)
        best_feat = np.full(L, -1)
        best_bin = np.zeros(L, dtype=np.int64)
        if max_features is not None and max_features < n_feat:
            keys = rng.random((L, n_feat))
            allowed = np.argsort(keys, axis=1)[:, :max_features]
            mask = np.zeros((L, n_feat), dtype=bool)
            np.put_along_axis(mask, allowed, True, axis=1)
        else:
            mask = None
        for f in range(n_feat):
            nb = binned.n_bins[f]
            if nb < 2:
                continue
            key = node_of * nb + codes[:, f]
            Gh = np.bincount(key, weights=g, minlength=L * nb).reshape(L, nb)
            Hh = np.bincount(key, weights=h, minlength=L * nb).reshape(L, nb)
            Ch = np.bincount(key, weights=count, minlength=L * nb).reshape(L, nb)
            GL = np.cumsum(Gh, axis=1)[:, :-1]
            HL = np.cumsum(Hh, axis=1)[:, :-1]
            CL = np.cumsum(Ch, axis=1)[:, :-1]
            GR = G_tot[:, None] - GL
            HR = H_tot[:, None] - HL
            CR = C_tot[:, None] - CL
            ok = (CL >= min_leaf) & (CR >= min_leaf) & (HL + l2 > 0) & (HR + l2 > 0)
            if min_hessian > 0:
                ok &= (HL >= min_hessian) & (HR >= min_hessian)
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = GL**2 / (HL + l2) + GR**2 / (HR + l2) - parent[:, None]
            gain = np.where(ok, gain, -np.inf)
            if mask is not None:
                gain[~mask[:, f]] = -np.inf
            k = np.argmax(gain, axis=1)
            gk = gain[np.arange(L), k]
            better = gk > best_gain
            best_gain[better] = gk[better]
            best_feat[better] = f
            best_bin[better] = k[better]

        split = (best_feat >= 0) & (best_gain > _GAIN_RTOL * (1.0 + np.abs(parent)))
        if not split.any():
            break
        child_pos = np.full((L, 2), -1, dtype=np.int64)
        next_level = []
        for j in np.flatnonzero(split):
            nid = level[j]
            f, b = int(best_feat[j]), int(best_bin[j])
            feature[nid] = f
            threshold[nid] = float(binned.edges[f][b])
            for side in (0, 1):
                child_pos[j, side] = len(next_level)
                next_level.append(len(feature))
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            left[nid], right[nid] = next_level[-2], next_level[-1]

        # route samples; samples of unsplit nodes drop out
        f_of = best_feat[node_of]
        go_right = np.zeros(node_of.size, dtype=bool)
        live = split[node_of]
        rows = np.flatnonzero(live)
        go_right[rows] = codes[rows, f_of[rows]] > best_bin[node_of[rows]]
        new_node = child_pos[node_of, go_right.astype(np.int64)]
        keep = live
        g, h, count, codes = g[keep], h[keep], count[keep], codes[keep]
        node_of = new_node[keep]

        L2 = len(next_level)
        G_tot = np.bincount(node_of, weights=g, minlength=L2)
        H_tot = np.bincount(node_of, weights=h, minlength=L2)
        C_tot = np.bincount(node_of, weights=count, minlength=L2)
        for j, nid in enumerate(next_level):
            denom = H_tot[j] + l2
            value[nid] = G_tot[j] / denom if denom > 0 else 0.0
        level = next_level
        depth += 1

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


@numba.njit(cache=True)
def _forest_sum(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(roots.size):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += value[node]
        out[i] = s
    return out


class Forest:
    """A list of trees flattened into contiguous arrays for fast summed prediction."""

    def __init__(self, trees: list[Tree]):
        self.trees = list(trees)
        offsets = np.cumsum([0] + [t.feature.size for t in self.trees])
        self._roots = offsets[:-1].astype(np.int64)
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees]) if self.trees else np.zeros(0)
        shift = np.concatenate([np.full(t.feature.size, o) for t, o in zip(self.trees, offsets)]) if self.trees else np.zeros(0, dtype=np.int64)
        self._feature = cat("feature").astype(np.int64)
        self._threshold = cat("threshold").astype(float)
        self._left = (cat("left") + shift).astype(np.int64)
        self._right = (cat("right") + shift).astype(np.int64)
        self._value = cat("value").astype(float)

    def __len__(self):
        return len(self.trees)

    def sum(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _forest_sum(X, self._feature, self._threshold, self._left, self._right, self._value, self._roots)


def _n_features(spec, n: int) -> int | None:
    if spec is None or spec == "all":
        return None
    if spec == "sqrt":
        return max(1, int(math.sqrt(n)))
    if isinstance(spec, float):
        return max(1, int(round(spec * n)))
    return max(1, min(int(spec), n))


class RandomForest:
    """Bagged least-squares trees; for 0/1 targets the mean is a class probability."""

    kind = "RandomForest"

    def __init__(self, n_trees=100, min_leaf=5, max_depth=None, max_features="sqrt", bootstrap=True, max_bins=255):
        self.params = dict(
            n_trees=int(n_trees),
            min_leaf=min_leaf,
            max_depth=max_depth,
            max_features=max_features,
            bootstrap=bool(bootstrap),
            max_bins=int(max_bins),
        )
        self.forest: Forest | None = None

    def fit(self, X, y, seed: int = 0) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        rng = np.random.default_rng(seed)
        binned = _Binned(X, p["max_bins"])
        k = _n_features(p["max_features"], X.shape[1])
        trees = []
        for _ in range(p["n_trees"]):
            if p["bootstrap"]:
                w = np.bincount(rng.integers(0, y.size, y.size), minlength=y.size).astype(float)
            else:
                w = np.ones(y.size)
            trees.append(
                grow_tree(binned, w * y, w, w, max_depth=p["max_depth"], min_leaf=p["min_leaf"], max_features=k, rng=rng)
            )
        self.forest = Forest(trees)
        return self

    def predict(self, X) -> np.ndarray:
        return self.forest.sum(X) / len(self.forest)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "trees": [t.to_dict() for t in self.forest.trees]}

    @classmethod
    def from_dict(cls, d) -> "RandomForest":
        model = cls(**d["params"])
        model.forest = Forest([Tree.from_dict(t) for t in d["trees"]])
        return model


class GradientBoosting:
    """Second-order gradient boosting with squared-error or logistic loss.

    For the logistic loss :meth:`predict` returns probabilities.
    """

    kind = "GradientBoostedTrees"

    def __init__(self, n_trees=300, max_depth=6, learning_rate=0.1, min_leaf=20, l2=1.0, loss="squared_error", max_bins=255):
        if loss not in ("squared_error", "logistic"):
            raise ValueError(f"unknown loss {loss!r}")
        self.params = dict(
            n_trees=int(n_trees),
            max_depth=int(max_depth),
            learning_rate=float(learning_rate),
            min_leaf=min_leaf,
            l2=float(l2),
            loss=loss,
            max_bins=int(max_bins),
        )
        self.init = 0.0
        self.forest: Forest | None = None

    def fit(self, X, y, seed: int = 0) -> "GradientBoosting":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        rng = np.random.default_rng(seed)
        binned = _Binned(X, p["max_bins"])
        if p["loss"] == "logistic":
            prior = min(max(y.mean(), 1e-12), 1 - 1e-12)
            self.init = math.log(prior / (1 - prior))
        else:
            self.init = float(y.mean())
        raw = np.full(y.size, self.init)
        ones = np.ones(y.size)
        trees = []
        for _ in range(p["n_trees"]):
            if p["loss"] == "logistic":
                prob = 1.0 / (1.0 + np.exp(-raw))
                g, h = y - prob, np.maximum(prob * (1.0 - prob), 1e-16)
            else:
                g, h = y - raw, ones
            tree = grow_tree(
                binned, g, h, ones, max_depth=p["max_depth"], min_leaf=p["min_leaf"], l2=p["l2"], min_hessian=1e-3, rng=rng
            )
            tree = Tree(tree.feature, tree.threshold, tree.left, tree.right, tree.value * p["learning_rate"])
            trees.append(tree)
            raw += Forest([tree]).sum(X)
        self.forest = Forest(trees)
        return self

    def decision_function(self, X) -> np.ndarray:
        return self.init + self.forest.sum(X)

    def predict(self, X) -> np.ndarray:
        raw = self.decision_function(X)
        if self.params["loss"] == "logistic":
            return 1.0 / (1.0 + np.exp(-raw))
        return raw

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "init": self.init, "trees": [t.to_dict() for t in self.forest.trees]}

    @classmethod
    def from_dict(cls, d) -> "GradientBoosting":
        model = cls(**d["params"])
        model.init = float(d["init"])
        model.forest = Forest([Tree.from_dict(t) for t in d["trees"]])
        return model


class KNeighbors:
    """Mean target of the ``k`` nearest training rows in standardized Euclidean distance."""

    kind = "KNearestNeighbor"

    def __init__(self, k=10):
        self.params = dict(k=int(k))
        self.X = self.y = self.mean = self.scale = None
        self._tree = None

    def fit(self, X, y, seed: int = 0) -> "KNeighbors":
        self.X = np.array(X, dtype=float)
        self.y = np.array(y, dtype=float)
        self.mean = self.X.mean(axis=0)
        std = self.X.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)
        self._tree = cKDTree((self.X - self.mean) / self.scale)
        return self

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = min(self.params["k"], self.y.size)
        _, nn = self._tree.query((X - self.mean) / self.scale, k=k)
        nn = np.asarray(nn).reshape(X.shape[0], k)
        return self.y[nn].mean(axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d) -> "KNeighbors":
        return cls(**d["params"]).fit(np.array(d["X"], dtype=float), np.array(d["y"], dtype=float))


_KINDS = {c.kind: c for c in (RandomForest, GradientBoosting, KNeighbors)}


def estimator_from_dict(d):
    return _KINDS[d["kind"]].from_dict(d)
