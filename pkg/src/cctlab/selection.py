"""Hybrid MIC + Spearman feature selection.

MIC is approximated with equal-frequency partitions on both axes over every
grid allowed by the size budget, so it is a lower bound on the exhaustive
maximal information coefficient. Both MIC and SCC depend only on the order
of the samples, never on their scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class NoVarianceError(ValueError):
    """Rank correlation is undefined for a constant sample."""


class SelectionError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class MicConfig:
    exponent: float = 0.6
    min_bins: int = 2

    def __post_init__(self):
        if not 0 < self.exponent <= 1:
            raise ValueError("exponent must lie in (0, 1]")
        if self.min_bins < 2:
            raise ValueError("min_bins must be at least 2")

    def grids(self, n: int) -> list[tuple[int, int]]:
        budget = n ** self.exponent
        out = []
        nx = self.min_bins
        while nx * self.min_bins < budget:
            ny = self.min_bins
            while nx * ny < budget:
                out.append((nx, ny))
                ny += 1
            nx += 1
        return out


def equal_frequency_bins(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin index per sample; tied values always share a bin."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    below = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return (below[inverse] * n_bins) // len(x)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def mic(x, y, cfg: MicConfig | None = None) -> float:
    """Maximal normalized mutual information over equal-frequency grids."""
    cfg = cfg or MicConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D samples of equal length")
    n = len(x)
    grids = cfg.grids(n)
    if not grids:
        raise ValueError(f"N={n} admits no grid under N^{cfg.exponent}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    bx = {k: equal_frequency_bins(x, k) for k in {g[0] for g in grids}}
    by = {k: equal_frequency_bins(y, k) for k in {g[1] for g in grids}}
    hx = {k: _entropy(np.bincount(b, minlength=k), n) for k, b in bx.items()}
    hy = {k: _entropy(np.bincount(b, minlength=k), n) for k, b in by.items()}
    best = 0.0
    for nx, ny in grids:
        joint = np.bincount(bx[nx] * ny + by[ny], minlength=nx * ny)
        info = hx[nx] + hy[ny] - _entropy(joint, n)
        best = max(best, info / math.log2(min(nx, ny)))
    return min(max(best, 0.0), 1.0)


def scc(x, y) -> float:
    """Spearman coefficient 1 - 6 sum d^2 / (n (n^2 - 1)) on average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D samples of equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise NoVarianceError("constant sample has no rank variance")
    d = rankdata(x) - rankdata(y)
    return float(1.0 - 6.0 * np.dot(d, d) / (n * (n * n - 1.0)))


def scc_matrix(X: np.ndarray) -> np.ndarray:
    """Pairwise SCC; NaN wherever a column is constant."""
    p = X.shape[1]
    out = np.full((p, p), np.nan)
    for i in range(p):
        for j in range(i, p):
            try:
                out[i, j] = out[j, i] = scc(X[:, i], X[:, j])
            except NoVarianceError:
                pass
    return out


@dataclass
class SelectionReport:
    features: list[str]
    mic_ranking: list[tuple[str, float]]
    scc_matrix: np.ndarray
    dropped: list[tuple[str, str]]
    kept: list[str]
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            return None if not np.isfinite(v) else float(v)
        return {
            "features": list(self.features),
            "mic_ranking": [[f, float(v)] for f, v in self.mic_ranking],
            "scc_matrix": [[clean(v) for v in row] for row in self.scc_matrix],
            "dropped": [[f, r] for f, r in self.dropped],
            "kept": list(self.kept),
            "settings": dict(self.settings),
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_scc_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + self.features)
            for name, row in zip(self.features, self.scc_matrix):
                w.writerow([name] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])


def select_features(names: Sequence[str], X: np.ndarray, y: np.ndarray, mic_floor: float = 0.1,
                    scc_threshold: float = 0.5, cfg: MicConfig | None = None) -> SelectionReport:
    """Drop low-MIC features, then greedily keep features in descending MIC
    order whose |SCC| with every already-kept feature is below the threshold.
    MIC ties are broken by column order."""
    names = list(names)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(names) or X.shape[0] != len(y):
        raise ValueError("feature matrix does not match names / target")
    scores = [mic(X[:, j], y, cfg) for j in range(len(names))]
    order = sorted(range(len(names)), key=lambda j: (-scores[j], j))
    ranking = [(names[j], scores[j]) for j in order]
    S = scc_matrix(X)

    dropped: list[tuple[str, str]] = []
    kept_idx: list[int] = []
    for j in order:
        if scores[j] <= mic_floor:
            dropped.append((names[j], "low-mic"))
            continue
        clash = next((k for k in kept_idx if not abs(S[j, k]) < scc_threshold), None)
        if clash is None:
            kept_idx.append(j)
        else:
            dropped.append((names[j], f"redundant-with {names[clash]}"))

    report = SelectionReport(
        features=names, mic_ranking=ranking, scc_matrix=S, dropped=dropped,
        kept=[names[j] for j in kept_idx],
        settings={"mic_floor": mic_floor, "scc_threshold": scc_threshold,
                  "mic_exponent": (cfg or MicConfig()).exponent},
    )
    if not kept_idx:
        raise SelectionError("every feature was dropped", report)
    return report


def reduce_columns(names: Sequence[str], X: np.ndarray, keep: Sequence[str]) -> np.ndarray:
    pos = {n: i for i, n in enumerate(names)}
    return np.asarray(X)[:, [pos[k] for k in keep]]
