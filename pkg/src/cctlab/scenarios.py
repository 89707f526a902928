"""Uncertainty sampling and CCT dataset generation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma

from .cct import DEFAULT_BETA, DEFAULT_BRACKET_MAX, DEFAULT_TOL, find_cct_batch
from .grid import (
    ContingencySpec,
    NetworkCase,
    NonConvergence,
    ReductionError,
    init_machines,
    phase_networks,
    solve_power_flow,
)
from .tds import DEFAULT_HORIZON, DEFAULT_STEP, FeatureRecord, build_swing_system, capture_features

logger = logging.getLogger(__name__)

CHUNK_SIZE = 150


@dataclass(frozen=True)
class LoadUncertainty:
    base: float
    lo_frac: float = 0.8
    hi_frac: float = 1.2
    sigma_frac: float = 0.2 / 3

    def __post_init__(self):
        if not self.lo_frac < self.hi_frac:
            raise ValueError("lo_frac must be below hi_frac")
        if self.sigma_frac <= 0:
            raise ValueError("sigma_frac must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return self.lo_frac * self.base, self.hi_frac * self.base


@dataclass(frozen=True)
class SolarUncertainty:
    base: float
    lo_frac: float = 0.75
    hi_frac: float = 1.15
    alpha: float = 2.0
    beta_shape: float = 2.0

    def __post_init__(self):
        if not self.lo_frac < self.hi_frac:
            raise ValueError("lo_frac must be below hi_frac")
        if self.alpha <= 0 or self.beta_shape <= 0:
            raise ValueError("beta shape parameters must be positive")

    @property
    def support(self) -> tuple[float, float]:
        return self.lo_frac * self.base, self.hi_frac * self.base


@dataclass(frozen=True)
class WindUncertainty:
    """Weibull power with mean ``base`` and coefficient of variation ``cv``."""

    base: float
    cv: float = 0.15

    def __post_init__(self):
        if self.cv <= 0:
            raise ValueError("cv must be positive")

    @property
    def shape(self) -> float:
        return weibull_shape_for_cv(self.cv)

    @property
    def scale(self) -> float:
        return self.base / gamma(1.0 + 1.0 / self.shape)


def weibull_shape_for_cv(cv: float) -> float:
    """Weibull shape k with sqrt(G(1+2/k)/G(1+1/k)^2 - 1) = cv."""
    def f(k):
        return gamma(1.0 + 2.0 / k) / gamma(1.0 + 1.0 / k) ** 2 - 1.0 - cv**2
    return brentq(f, 0.05, 500.0, xtol=1e-14)


@dataclass(frozen=True)
class UncertaintySpec:
    loads: tuple[LoadUncertainty, ...]
    solar: SolarUncertainty
    wind: WindUncertainty

    @classmethod
    def for_case(cls, case: NetworkCase, **overrides) -> "UncertaintySpec":
        """Defaults centred on the case's base loads and injections."""
        inj = {i.id: i.p for i in case.injections}
        load_kw = overrides.get("load", {})
        return cls(
            loads=tuple(LoadUncertainty(b.p_load, **load_kw) for b in case.load_buses()),
            solar=SolarUncertainty(inj.get("solar", 0.0), **overrides.get("solar", {})),
            wind=WindUncertainty(inj.get("wind", 0.0), **overrides.get("wind", {})),
        )

    def to_dict(self) -> dict:
        return {"loads": [asdict(x) for x in self.loads], "solar": asdict(self.solar),
                "wind": asdict(self.wind)}


@dataclass(frozen=True)
class Scenario:
    p_loads: tuple[float, ...]
    p_solar: float
    p_wind: float
    seed_index: int = 0

    def to_dict(self) -> dict:
        return {"p_loads": list(self.p_loads), "p_solar": self.p_solar, "p_wind": self.p_wind,
                "seed_index": self.seed_index}


def _truncated_normal(rng, mean, sigma, lo, hi, n):
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(mean, sigma, size=max(2 * (n - out.size), 16))
        out = np.concatenate([out, draw[(draw >= lo) & (draw <= hi)]])
    return out[:n]


def sample_scenarios(spec: UncertaintySpec, n: int, seed: int) -> list[Scenario]:
    """``n`` independent draws of the uncertainty vector, deterministic in ``seed``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    loads = np.column_stack([
        _truncated_normal(rng, ld.base, ld.sigma_frac * ld.base, *ld.support, n)
        for ld in spec.loads
    ]) if spec.loads else np.zeros((n, 0))
    lo, hi = spec.solar.support
    solar = lo + (hi - lo) * rng.beta(spec.solar.alpha, spec.solar.beta_shape, size=n)
    wind = spec.wind.scale * rng.weibull(spec.wind.shape, size=n)
    return [Scenario(tuple(float(v) for v in loads[i]), float(solar[i]), float(wind[i]), i)
            for i in range(n)]


@dataclass(frozen=True)
class DatasetRow:
    features: FeatureRecord
    cct: float
    scenario: Scenario | None = None


@dataclass
class Dataset:
    rows: list[DatasetRow]
    provenance: dict = field(default_factory=dict)
    n_machines: int = 3
    n_loads: int = 3

    @property
    def has_t1(self) -> bool:
        return bool(self.rows) and all(r.features.pg_t1 is not None for r in self.rows)

    def columns(self, with_t1: bool | None = None) -> list[str]:
        with_t1 = self.has_t1 if with_t1 is None else with_t1
        return FeatureRecord.names(self.n_machines, self.n_loads, with_t1)

    def matrix(self, with_t1: bool | None = None) -> np.ndarray:
        with_t1 = self.has_t1 if with_t1 is None else with_t1
        width = len(self.columns(with_t1))
        if not self.rows:
            return np.zeros((0, width))
        return np.array([r.features.values(with_t1) for r in self.rows])

    @property
    def cct(self) -> np.ndarray:
        return np.array([r.cct for r in self.rows])

    def to_frame(self, with_t1: bool | None = None) -> tuple[list[str], np.ndarray, np.ndarray]:
        return self.columns(with_t1), self.matrix(with_t1), self.cct

    def write(self, csv_path: str | Path, provenance_path: str | Path | None = None) -> None:
        cols = self.columns() + ["cct"]
        X = self.matrix()
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row, x in zip(self.rows, X):
                vals = [repr(float(v)) for v in x]
                vals[0] = str(int(x[0]))
                w.writerow(vals + [repr(float(row.cct))])
        if provenance_path is not None:
            prov = dict(self.provenance)
            prov["scenarios"] = [r.scenario.to_dict() if r.scenario else None for r in self.rows]
            Path(provenance_path).write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")


def read_table(csv_path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read a dataset CSV into (feature names, feature matrix, cct)."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[-1] != "cct":
        raise ValueError("last column must be cct")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
    return header[:-1], data[:, :-1], data[:, -1]


def case_hash(case: NetworkCase) -> str:
    blob = json.dumps(case.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _run_chunk(args):
    (case, contingency, scenarios, beta, bracket_max, tol, step, t_fault, horizon,
     with_t1) = args
    prepared = []
    failures = []
    for sc in scenarios:
        try:
            pf = solve_power_flow(case, sc)
            init = init_machines(pf)
            nets = phase_networks(pf, contingency)
        except (NonConvergence, ReductionError) as exc:
            failures.append((sc.seed_index, f"{type(exc).__name__}: {exc}"))
            continue
        system = build_swing_system(pf, init, contingency, nets)
        feats = capture_features(pf, init, contingency, system, nets[1], t_fault, step, with_t1)
        prepared.append((sc, system, feats))
    results = find_cct_batch([p[1] for p in prepared], beta, bracket_max, tol, step,
                             t_fault, horizon)
    out = []
    for (sc, _, feats), res in zip(prepared, results):
        out.append((sc, feats, res.kind, res.value))
    return contingency.number, out, failures


def build_dataset(case: NetworkCase, contingencies: Sequence[ContingencySpec] | None,
                  spec: UncertaintySpec, n_per_contingency: int, seed: int, workers: int = 1,
                  beta: float = DEFAULT_BETA, bracket_max: float = DEFAULT_BRACKET_MAX,
                  tol: float = DEFAULT_TOL, step: float = DEFAULT_STEP, t_fault: float = 1.0,
                  horizon: float = DEFAULT_HORIZON, with_t1: bool = True,
                  chunk_size: int = CHUNK_SIZE) -> Dataset:
    """CCT-labelled feature rows for every (contingency, scenario) pair.

    Scenarios are drawn independently per contingency from one seeded stream.
    Zero, infinite and non-converged rows are excluded and counted. Work is
    split into fixed chunks, so the output does not depend on ``workers``.
    """
    contingencies = [case.contingency(c) if isinstance(c, int) else c
                     for c in (case.contingencies if contingencies is None else contingencies)]
    for c in contingencies:
        case.check_contingency(c)
    all_sc = sample_scenarios(spec, n_per_contingency * len(contingencies), seed)
    jobs = []
    for k, c in enumerate(contingencies):
        block = all_sc[k * n_per_contingency:(k + 1) * n_per_contingency]
        block = [Scenario(s.p_loads, s.p_solar, s.p_wind, i) for i, s in enumerate(block)]
        for a in range(0, len(block), chunk_size):
            jobs.append((case, c, block[a:a + chunk_size], beta, bracket_max, tol, step,
                         t_fault, horizon, with_t1))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_chunk, jobs))
    else:
        outputs = [_run_chunk(j) for j in jobs]

    rows: list[DatasetRow] = []
    excluded = {"zero": 0, "infinite": 0, "nonconverged": 0}
    failures = []
    for number, out, fails in outputs:
        for sc, feats, kind, value in out:
            if kind == "finite" and value is not None and value > 0:
                rows.append(DatasetRow(feats, value, sc))
            else:
                excluded[kind] += 1
        for idx, msg in fails:
            excluded["nonconverged"] += 1
            failures.append({"contingency": number, "seed_index": idx, "error": msg})
    rows.sort(key=lambda r: (r.features.cont_no, r.scenario.seed_index))

    provenance = {
        "seed": seed,
        "case_hash": case_hash(case),
        "contingencies": [c.number for c in contingencies],
        "n_per_contingency": n_per_contingency,
        "n_rows": len(rows),
        "excluded": excluded,
        "failures": failures,
        "settings": {"beta": beta, "bracket_max": bracket_max, "tol": tol, "step": step,
                     "t_fault": t_fault, "horizon": horizon},
        "uncertainty": spec.to_dict(),
    }
    return Dataset(rows, provenance, case.n_machines, len(case.load_buses()))


def summarize(dataset: Dataset, bin_width: float = 0.02) -> dict:
    """Per-contingency mean / sample std / count and a global CCT histogram."""
    groups: dict[int, list[float]] = {}
    for r in dataset.rows:
        groups.setdefault(r.features.cont_no, []).append(r.cct)
    per = {}
    notes = []
    for number in dataset.provenance.get("contingencies", sorted(groups)):
        vals = groups.get(number)
        if not vals:
            notes.append(f"contingency {number}: no rows")
            continue
        arr = np.array(vals)
        per[number] = {"mean": float(arr.mean()),
                       "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                       "count": int(arr.size)}
    cct = dataset.cct
    if cct.size:
        lo = math.floor(cct.min() / bin_width) * bin_width
        n_bins = max(1, int(math.ceil((cct.max() - lo) / bin_width + 1e-12)))
        edges = lo + bin_width * np.arange(n_bins + 1)
        counts, _ = np.histogram(cct, bins=edges)
        hist = {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}
    else:
        hist = {"edges": [], "counts": []}
    return {"per_contingency": per, "histogram": hist, "notes": notes}
