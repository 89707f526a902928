"""Instance-based regressors: k nearest neighbours and GRNN."""

from __future__ import annotations

import numpy as np

from .base import Regressor, register


def sq_distances(A: np.ndarray, B: np.ndarray, chunk: int = 256) -> np.ndarray:
    # explicit differences: exact zeros for identical rows, unlike the
    # |a|^2 + |b|^2 - 2ab expansion
    out = np.empty((len(A), len(B)))
    for s in range(0, len(A), chunk):
        diff = A[s:s + chunk, None, :] - B[None, :, :]
        out[s:s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


@register
class KNNRegressor(Regressor):
    """Uniform average of the k closest standardized training rows.
    Distance ties go to the lower training index."""

    kind = "knn"
    defaults = {"k": 5}

    def _fit(self, Xs, ys):
        if self.params["k"] < 1:
            raise ValueError("k must be positive")
        self.X_train = Xs.copy()
        self.y_train = ys.copy()

    def _predict(self, Xs):
        k = min(self.params["k"], len(self.y_train))
        d = sq_distances(Xs, self.X_train)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        return self.y_train[nearest].mean(axis=1)

    def _state(self):
        return {"X_train": self.X_train, "y_train": self.y_train}

    def _load_state(self, state):
        self.X_train = state["X_train"]
        self.y_train = state["y_train"]


def nadaraya_watson(d2: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian-kernel weighted mean of ``y`` per row of squared distances.

    Each row is shifted by its smallest finite distance before
    exponentiating, so tiny bandwidths do not underflow to 0/0.
    """
    shift = np.min(d2, axis=1, keepdims=True)
    w = np.exp(-(d2 - shift) / (2.0 * bandwidth ** 2))
    ybar = y.mean()
    return ybar + (w @ (y - ybar)) / w.sum(axis=1)


@register
class GRNNRegressor(Regressor):
    """General regression neural network (Nadaraya-Watson estimator).

    With ``bandwidth=None`` the kernel width is picked by leave-one-out error
    over ``linspace(lo, hi, n) * sqrt(p)``, where sqrt(p) is the typical
    distance scale of p standardized features.
    """

    kind = "grnn"
    defaults = {"bandwidth": None, "grid": (0.05, 1.0, 20)}

    def bandwidth_grid(self, p: int) -> np.ndarray:
        lo, hi, n = self.params["grid"]
        return np.linspace(lo, hi, int(n)) * np.sqrt(p)

    def _fit(self, Xs, ys):
        self.X_train = Xs.copy()
        self.y_train = ys.copy()
        if self.params["bandwidth"] is not None:
            self.bandwidth = float(self.params["bandwidth"])
            self.cv_errors = None
            return
        d2 = sq_distances(Xs, Xs)
        np.fill_diagonal(d2, np.inf)
        grid = self.bandwidth_grid(Xs.shape[1])
        errs = np.array([np.mean((nadaraya_watson(d2, ys, h) - ys) ** 2) for h in grid])
        self.cv_errors = errs
        self.bandwidth = float(grid[int(np.argmin(errs))])

    def _predict(self, Xs):
        return nadaraya_watson(sq_distances(Xs, self.X_train), self.y_train, self.bandwidth)

    def _state(self):
        return {"X_train": self.X_train, "y_train": self.y_train,
                "bandwidth": np.array([self.bandwidth])}

    def _load_state(self, state):
        self.X_train = state["X_train"]
        self.y_train = state["y_train"]
        self.bandwidth = float(state["bandwidth"][0])
