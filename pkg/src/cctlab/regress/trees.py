"""CART regression trees and a bagged random forest."""

from __future__ import annotations

import math

import numpy as np

from .base import Regressor, register


class _Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: getattr(self, k)
                for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_arrays(cls, state: dict, prefix: str = "") -> "_Tree":
        return cls(*(state[prefix + k] for k in ("feature", "threshold", "left", "right", "value")))


def _best_split(x: np.ndarray, r: np.ndarray, min_leaf: int):
    """Best threshold on one feature for centred targets ``r``.

    Maximizes S_L^2/n_L + S_R^2/n_R, which is the SSE reduction when r sums
    to zero. Returns (gain, threshold) or None.
    """
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cs = np.cumsum(r[order])[:-1]
    nl = np.arange(1, n)
    ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    if not ok.any():
        return None
    total = cs[-1] + r[order][-1]
    gain = cs ** 2 / nl + (total - cs) ** 2 / (n - nl)
    gain[~ok] = -np.inf
    i = int(np.argmax(gain))
    a, b = xs[i], xs[i + 1]
    thr = 0.5 * (a + b)
    if not a <= thr < b:
        thr = a
    return float(gain[i]), float(thr)


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int,
               max_features: int | None, rng: np.random.Generator | None) -> _Tree:
    """Greedy variance-reduction CART. Candidate features are scanned in
    column order (or a random subset when ``max_features < p``); exact ties
    keep the first candidate."""
    p = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        r = y[idx] - value[node]
        sse = float(r @ r)
        if sse <= 1e-14 * max(1.0, float(y[idx] @ y[idx])):
            continue
        if max_features is None or max_features >= p:
            cand = range(p)
        else:
            cand = rng.choice(p, size=max_features, replace=False)
        best = None
        for f in cand:
            res = _best_split(X[idx, f], r, min_leaf)
            if res is not None and (best is None or res[0] > best[0]):
                best = (res[0], res[1], int(f))
        if best is None or best[0] <= 1e-12 * sse:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return _Tree(feature, threshold, left, right, value)


@register
class TreeRegressor(Regressor):
    kind = "tree"
    defaults = {"max_depth": 12, "min_samples_leaf": 5, "max_features": None, "seed": 0}
    standardize_x = False

    def _fit(self, Xs, ys):
        rng = np.random.default_rng(self.params["seed"])
        self.tree = build_tree(Xs, ys, self.params["max_depth"], self.params["min_samples_leaf"],
                               self.params["max_features"], rng)

    def _predict(self, Xs):
        return self.tree.predict(Xs)

    def apply(self, X) -> np.ndarray:
        """Leaf index of each row."""
        return self.tree.apply(np.asarray(X, dtype=float))

    def _state(self):
        return self.tree.arrays()

    def _load_state(self, state):
        self.tree = _Tree.from_arrays(state)


@register
class ForestRegressor(Regressor):
    """Bagged CART trees with a per-split feature subsample.

    ``max_features="third"`` means ceil(p/3); ``None`` uses every feature in
    column order, so a single unbootstrapped tree reproduces ``TreeRegressor``.
    """

    kind = "forest"
    defaults = {"n_trees": 100, "bootstrap": True, "max_features": "third",
                "max_depth": 12, "min_samples_leaf": 5, "seed": 0}
    standardize_x = False

    def _resolve_max_features(self, p: int) -> int | None:
        m = self.params["max_features"]
        if m == "third":
            return max(1, math.ceil(p / 3))
        return m

    def _fit(self, Xs, ys):
        n, p = Xs.shape
        m = self._resolve_max_features(p)
        self.trees = []
        for child in np.random.SeedSequence(self.params["seed"]).spawn(self.params["n_trees"]):
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, n) if self.params["bootstrap"] else np.arange(n)
            self.trees.append(build_tree(Xs[rows], ys[rows], self.params["max_depth"],
                                         self.params["min_samples_leaf"], m, rng))

    def _predict(self, Xs):
        return np.mean([t.predict(Xs) for t in self.trees], axis=0)

    def _state(self):
        out = {}
        for i, t in enumerate(self.trees):
            out.update(t.arrays(f"t{i}."))
        return out

    def _load_state(self, state):
        n = len({k.split(".")[0] for k in state})
        self.trees = [_Tree.from_arrays(state, f"t{i}.") for i in range(n)]
