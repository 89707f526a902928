"""Common fit/predict plumbing, standardization and JSON persistence."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "cctlab-regressor"
FORMAT_VERSION = 1

_REGISTRY: dict[str, type["Regressor"]] = {}


class NotFittedError(RuntimeError):
    pass


class TrainingError(FloatingPointError):
    """Loss or predictions became non-finite."""


def register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def kinds() -> list[str]:
    return list(_REGISTRY)


def make(kind: str, **params) -> "Regressor":
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {kinds()}") from None
    return cls(**params)


def _scale_stats(a: np.ndarray):
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    # constant columns pass through centred
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


class Regressor:
    """Base class. Subclasses implement ``_fit``/``_predict`` on standardized
    inputs and expose their learned arrays through ``_state``/``_load_state``."""

    kind = ""
    defaults: dict = {}
    standardize_x = True
    standardize_y = False

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise TypeError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        self.fitted = False

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    # -- public interface ------------------------------------------------

    def fit(self, X, y) -> "Regressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise ValueError("X must be (n, p) and y (n,)")
        if len(y) < 2:
            raise ValueError("need at least two training rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("training data contains missing or non-finite values")
        self.n_features = X.shape[1]
        if self.standardize_x:
            self.x_mean, self.x_scale = _scale_stats(X)
        else:
            self.x_mean, self.x_scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
        if self.standardize_y:
            m, s = _scale_stats(y[:, None])
            self.y_mean, self.y_scale = float(m[0]), float(s[0])
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self._fit((X - self.x_mean) / self.x_scale, (y - self.y_mean) / self.y_scale)
        self.fitted = True
        return self

    def predict(self, X) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError(f"{self.kind} model used before fit")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = self._predict((X - self.x_mean) / self.x_scale) * self.y_scale + self.y_mean
        if not np.isfinite(out).all():
            raise TrainingError(f"{self.kind} produced non-finite predictions")
        return out

    @property
    def n_params(self) -> int:
        raise NotImplementedError(f"{self.kind} has no fixed parameter count")

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        if not self.fitted:
            raise NotFittedError("only fitted models can be saved")
        state = {k: np.asarray(v) for k, v in self._state().items()}
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "params": _jsonable(self.params),
            "n_features": self.n_features,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "state": {k: {"shape": list(v.shape), "dtype": v.dtype.kind,
                          "data": v.ravel().tolist()} for k, v in state.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Regressor":
        if data.get("format") != FORMAT:
            raise ValueError("not a saved regressor")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {data.get('version')}")
        params = data["params"]
        model = make(data["kind"], **{k: tuple(v) if isinstance(v, list) else v
                                      for k, v in params.items()})
        model.n_features = int(data["n_features"])
        model.x_mean = np.array(data["x_mean"], dtype=float)
        model.x_scale = np.array(data["x_scale"], dtype=float)
        model.y_mean = float(data["y_mean"])
        model.y_scale = float(data["y_scale"])
        state = {}
        for k, v in data["state"].items():
            dtype = int if v["dtype"] in "iu" else float
            state[k] = np.array(v["data"], dtype=dtype).reshape(v["shape"])
        model._load_state(state)
        model.fitted = True
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    # -- subclass hooks ----------------------------------------------------

    def _fit(self, Xs: np.ndarray, ys: np.ndarray) -> None:
        raise NotImplementedError

    def _predict(self, Xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _load_state(self, state: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


def load(path: str | Path) -> Regressor:
    return Regressor.from_dict(json.loads(Path(path).read_text()))


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
