"""Error metrics, k-fold cross-validation, cluster breakdown and the
feature-set experiments."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..selection import MicConfig, SelectionReport, reduce_columns, select_features
from .base import Regressor, make

logger = logging.getLogger(__name__)

CLUSTER_BOUNDARIES = (0.25, 0.4)
METRIC_NAMES = ("r2", "mse", "mae", "mape_pct")
MODES = ("with-label", "no-label", "no-label-plus-t1")
BENCH_KINDS = ("linear", "tree", "knn", "forest", "mlp", "grnn", "kan")


def metrics(y_true, y_pred) -> dict[str, float]:
    """r^2 about the sample mean, MSE, MAE and MAPE in percent.

    r^2 is NaN when y_true has no variance. MAPE requires y_true > 0.
    """
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape or y.ndim != 1 or len(y) == 0:
        raise ValueError("y_true and y_pred must be equal-length 1-D arrays")
    if np.any(y <= 0):
        raise ValueError("MAPE needs strictly positive targets")
    res = y - p
    dev = y - y.mean()
    ss_res = float(res @ res)
    ss_tot = float(dev @ dev)
    return {
        "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan"),
        "mse": ss_res / len(y),
        "mae": float(np.abs(res).mean()),
        "mape_pct": 100.0 * float(np.abs(res / y).mean()),
    }


def cluster_labels(boundaries: Sequence[float]) -> list[str]:
    b = list(boundaries)
    labels = [f"<={b[0]:g}"]
    labels += [f"({lo:g},{hi:g}]" for lo, hi in zip(b[:-1], b[1:])]
    labels.append(f">{b[-1]:g}")
    return labels


def cluster_eval(y_true, y_pred, boundaries: Sequence[float] = CLUSTER_BOUNDARIES
                 ) -> dict[str, dict[str, float]]:
    """MSE per target range. Ranges are closed on the right; empty ones are
    left out of the result."""
    b = np.asarray(boundaries, dtype=float)
    if b.ndim != 1 or len(b) == 0 or np.any(np.diff(b) <= 0):
        raise ValueError("boundaries must be a non-empty ascending sequence")
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    which = np.searchsorted(b, y, side="left")
    out = {}
    for i, label in enumerate(cluster_labels(b)):
        m = which == i
        if m.any():
            out[label] = {"mse": float(np.mean((y[m] - p[m]) ** 2)), "n": int(m.sum())}
    return out


ModelSpec = str | tuple[str, dict] | Callable[[], Regressor]


def _factory(spec: ModelSpec) -> tuple[str, Callable[[], Regressor]]:
    if isinstance(spec, str):
        return spec, lambda: make(spec)
    if isinstance(spec, tuple):
        kind, params = spec
        return kind, lambda: make(kind, **params)
    return getattr(spec(), "kind", "custom"), spec


@dataclass
class EvalRecord:
    model: str
    r2: float
    mse: float
    mae: float
    mape_pct: float
    folds: list[dict] = field(default_factory=list)
    clusters: dict[str, dict[str, float]] = field(default_factory=dict)
    predictions: np.ndarray | None = None
    seconds: float = 0.0

    def row(self) -> dict:
        return {"model": self.model, "r2": self.r2, "mse": self.mse, "mae": self.mae,
                "mape_pct": self.mape_pct}

    def to_dict(self) -> dict:
        return {**self.row(), "folds": self.folds, "clusters": self.clusters}


def fold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def kfold_cv(X, y, spec: ModelSpec, k: int = 5, seed: int = 0,
             boundaries: Sequence[float] = CLUSTER_BOUNDARIES) -> EvalRecord:
    """Shuffled k-fold CV. Each fold's model standardizes on its own training
    rows. Aggregates are fold metrics averaged with fold-size weights; for
    r^2, folds where it is undefined (one row, or constant targets) are
    skipped. Cluster MSEs use the pooled out-of-fold predictions."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= N (k={k}, N={n})")
    if n - int(np.ceil(n / k)) < 2:
        raise ValueError("a training fold would have fewer than 2 rows")
    name, factory = _factory(spec)
    oof = np.empty(n)
    folds = []
    t0 = time.perf_counter()
    for i, test in enumerate(fold_indices(n, k, seed)):
        train = np.setdiff1d(np.arange(n), test)
        model = factory().fit(X[train], y[train])
        oof[test] = model.predict(X[test])
        folds.append({"fold": i, "n": int(len(test)), **metrics(y[test], oof[test])})
    w = np.array([f["n"] for f in folds], dtype=float)
    agg = {}
    for m in METRIC_NAMES:
        v = np.array([f[m] for f in folds])
        ok = np.isfinite(v)
        agg[m] = float(np.sum(w[ok] * v[ok]) / w[ok].sum()) if ok.any() else float("nan")
    return EvalRecord(name, **agg, folds=folds, clusters=cluster_eval(y, oof, boundaries),
                      predictions=oof, seconds=time.perf_counter() - t0)


def mode_columns(names: Sequence[str], mode: str) -> list[str]:
    """Candidate feature pool for an experiment mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    names = list(names)
    t1 = [c for c in names if c.endswith("_t1")]
    if mode == "no-label-plus-t1":
        if not t1:
            raise ValueError("mode no-label-plus-t1 needs pg*_t1 columns in the dataset")
        return [c for c in names if c != "cont_no"]
    pool = [c for c in names if c not in t1]
    return pool if mode == "with-label" else [c for c in pool if c != "cont_no"]


@dataclass
class ExperimentResult:
    mode: str
    selection: SelectionReport
    features: list[str]
    records: dict[str, EvalRecord]

    def table(self) -> list[dict]:
        return [r.row() for r in self.records.values()]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "features": self.features,
                "selection": self.selection.to_dict(),
                "models": {k: r.to_dict() for k, r in self.records.items()}}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *METRIC_NAMES])
        for r in self.records.values():
            w.writerow([r.model, *(repr(getattr(r, m)) for m in METRIC_NAMES)])
        return buf.getvalue()

    def cluster_csv_text(self) -> str:
        labels = cluster_labels(CLUSTER_BOUNDARIES)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *labels])
        for r in self.records.values():
            w.writerow([r.model, *(repr(r.clusters[c]["mse"]) if c in r.clusters else ""
                                   for c in labels)])
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"mode {self.mode}: features {', '.join(self.features)}",
                 f"{'model':<8}{'r2':>9}{'MSE':>12}{'MAE':>9}{'MAPE%':>9}"]
        for r in self.records.values():
            lines.append(f"{r.model:<8}{r.r2:>9.4f}{r.mse:>12.3e}{r.mae:>9.4f}{r.mape_pct:>9.3f}")
        return "\n".join(lines)


def run_experiment(names: Sequence[str], X, y, mode: str = "with-label",
                   models: Sequence[ModelSpec] = BENCH_KINDS, k: int = 5, seed: int = 0,
                   mic_floor: float = 0.1, scc_threshold: float = 0.5,
                   mic_cfg: MicConfig | None = None) -> ExperimentResult:
    """Pick the mode's feature pool, run feature selection on it, then
    cross-validate every model on the kept columns."""
    pool = mode_columns(names, mode)
    Xp = reduce_columns(names, X, pool)
    report = select_features(pool, Xp, y, mic_floor, scc_threshold, mic_cfg)
    Xk = reduce_columns(pool, Xp, report.kept)
    records = {}
    for spec in models:
        rec = kfold_cv(Xk, y, spec, k, seed)
        logger.info("%s %s: r2=%.4f mse=%.3e (%.1fs)", mode, rec.model, rec.r2, rec.mse,
                    rec.seconds)
        records[rec.model] = rec
    return ExperimentResult(mode, report, list(report.kept), records)
