"""Critical clearing time by bisection on the B-stability verdict."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import ContingencySpec, NetworkCase, init_machines, phase_networks, solve_power_flow
from .tds import DEFAULT_HORIZON, DEFAULT_STEP, SwingSystem, build_swing_system, integrate_batch

DEFAULT_BETA = 180.0
DEFAULT_BRACKET_MAX = 2.0
DEFAULT_TOL = 2e-4


@dataclass(frozen=True)
class CctResult:
    kind: str  # "finite" | "zero" | "infinite"
    value: float | None
    evaluations: int
    bracket: tuple[float, float]

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"


def stable_at(systems: Sequence[SwingSystem], durations, beta: float = DEFAULT_BETA,
              **sim) -> np.ndarray:
    """B-stability verdict for each system cleared after its duration."""
    eta, diverged, _ = integrate_batch(systems, durations, **sim)
    return (eta <= beta) & np.isnan(diverged)


def duration_grid(t_min: float, bracket_max: float, tol: float) -> np.ndarray:
    """Candidate durations t_min + k*tol, built by repeated addition so that
    ``grid[k + 1] == grid[k] + tol`` holds exactly in floating point. The last
    point is the first one at or above ``bracket_max``."""
    n = int(math.ceil((bracket_max - t_min) / tol - 1e-9))
    return np.cumsum(np.concatenate([[t_min], np.full(n, tol)]))


def find_cct_batch(systems: Sequence[SwingSystem], beta: float = DEFAULT_BETA,
                   bracket_max: float = DEFAULT_BRACKET_MAX, tol: float = DEFAULT_TOL,
                   step: float = DEFAULT_STEP, t_fault: float = 1.0,
                   horizon: float = DEFAULT_HORIZON) -> list[CctResult]:
    """Bisection over the tol-spaced duration grid, run in lockstep for a batch.

    The search ends on adjacent grid points, so the reported value is stable
    and ``value + tol`` was itself simulated and found unstable, even where
    the stability boundary is not monotone in the duration. Each member's
    candidates depend only on its own verdicts, so results match single runs.
    """
    if not systems:
        return []
    if not 0 < tol < bracket_max:
        raise ValueError("need 0 < tol < bracket_max")
    sim = dict(step=step, t_fault=t_fault, horizon=horizon)
    grid = duration_grid(step, bracket_max, tol)
    top = len(grid) - 1
    B = len(systems)

    ok_min = stable_at(systems, grid[0], beta, **sim)
    results: list[CctResult | None] = [None] * B
    for b in np.flatnonzero(~ok_min):
        results[b] = CctResult("zero", None, 1, (0.0, float(grid[0])))
    live = list(np.flatnonzero(ok_min))
    if live:
        ok_max = stable_at([systems[b] for b in live], grid[top], beta, **sim)
        for b, ok in zip(live, ok_max):
            if ok:
                results[b] = CctResult("infinite", None, 2, (float(grid[top]), np.inf))
        live = [b for b, ok in zip(live, ok_max) if not ok]

    lo = np.zeros(B, dtype=np.int64)
    hi = np.full(B, top, dtype=np.int64)
    evals = np.full(B, 2)
    active = [b for b in live if hi[b] - lo[b] > 1]
    while active:
        idx = np.array(active)
        mid = (lo[idx] + hi[idx]) // 2
        ok = stable_at([systems[b] for b in idx], grid[mid], beta, **sim)
        evals[idx] += 1
        lo[idx] = np.where(ok, mid, lo[idx])
        hi[idx] = np.where(ok, hi[idx], mid)
        active = [b for b in active if hi[b] - lo[b] > 1]
    for b in live:
        results[b] = CctResult("finite", float(grid[lo[b]]), int(evals[b]),
                               (float(grid[lo[b]]), float(grid[hi[b]])))
    return results  # type: ignore[return-value]


def prepare_system(case: NetworkCase, scenario, contingency: ContingencySpec):
    """Power flow, machine initialization and phase networks for one row."""
    pf = solve_power_flow(case, scenario)
    init = init_machines(pf)
    nets = phase_networks(pf, contingency)
    return pf, init, nets, build_swing_system(pf, init, contingency, nets)


def find_cct(case: NetworkCase, scenario, contingency: ContingencySpec,
             beta: float = DEFAULT_BETA, bracket_max: float = DEFAULT_BRACKET_MAX,
             tol: float = DEFAULT_TOL, step: float = DEFAULT_STEP, t_fault: float = 1.0,
             horizon: float = DEFAULT_HORIZON) -> CctResult:
    """CCT as a fault duration after ``t_fault``. Power-flow failures propagate."""
    system = prepare_system(case, scenario, contingency)[3]
    return find_cct_batch([system], beta, bracket_max, tol, step, t_fault, horizon)[0]
