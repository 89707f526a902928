"""Ordinary least squares."""

from __future__ import annotations

import warnings

import numpy as np

from .base import Regressor, register


class RankDeficientWarning(UserWarning):
    pass


@register
class LinearRegressor(Regressor):
    """OLS solved by an SVD-based least-squares routine. A rank-deficient
    design gets the minimum-norm solution and a warning."""

    kind = "linear"
    defaults: dict = {}

    def _fit(self, Xs, ys):
        xm = Xs.mean(axis=0)
        ym = ys.mean()
        w, _, rank, _ = np.linalg.lstsq(Xs - xm, ys - ym, rcond=None)
        if rank < Xs.shape[1]:
            warnings.warn(f"design matrix has rank {rank} < {Xs.shape[1]}; "
                          "using the minimum-norm solution", RankDeficientWarning, stacklevel=3)
        self.w = w
        self.b = float(ym - xm @ w)

    def _predict(self, Xs):
        return Xs @ self.w + self.b

    @property
    def coef(self) -> np.ndarray:
        """Slopes in the original feature units."""
        return self.w / self.x_scale

    @property
    def intercept(self) -> float:
        return float(self.b - self.coef @ self.x_mean)

    @property
    def n_params(self) -> int:
        return self.n_features + 1

    def _state(self):
        return {"w": self.w, "b": np.array([self.b])}

    def _load_state(self, state):
        self.w = state["w"]
        self.b = float(state["b"][0])
