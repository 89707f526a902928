"""Fixed-step time-domain simulation of classical swing dynamics.

Three topology phases (pre-fault, fault-on, post-fault) are integrated with
classical RK4. Each phase segment gets its own uniform step no larger than
the nominal step so that the fault and clearing instants are grid points.
The RK4 loop is compiled with numba and runs member by member over a batch
of scenarios, so a result never depends on what else is in the batch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .grid import (
    ContingencySpec,
    MachineInitState,
    PowerFlowSolution,
    ReducedNetwork,
    electrical_power,
    phase_networks,
)

DIVERGENCE_SPREAD = 4.0 * math.pi
DEFAULT_STEP = 0.002
DEFAULT_HORIZON = 10.0


@dataclass(frozen=True)
class SwingState:
    delta: np.ndarray
    omega_dev: np.ndarray


@dataclass(frozen=True)
class SimulationSchedule:
    t_fault: float = 1.0
    t_clear: float = 1.2
    t_end: float | None = None
    step: float = DEFAULT_STEP
    t_start: float = 0.0

    def __post_init__(self):
        if self.t_end is None:
            object.__setattr__(self, "t_end", self.t_fault + DEFAULT_HORIZON)
        if self.step <= 0:
            raise ValueError("step must be positive")
        # t_clear == t_fault is allowed: an instantly cleared fault
        if not (self.t_start < self.t_fault <= self.t_clear < self.t_end):
            raise ValueError("need t_start < t_fault <= t_clear < t_end")

    @classmethod
    def for_duration(cls, duration: float, t_fault: float = 1.0, step: float = DEFAULT_STEP,
                     horizon: float = DEFAULT_HORIZON) -> "SimulationSchedule":
        return cls(t_fault=t_fault, t_clear=t_fault + duration, t_end=t_fault + horizon,
                   step=step)

    @property
    def duration(self) -> float:
        return self.t_clear - self.t_fault

    def segments(self) -> list[tuple[float, int, float]]:
        """(segment start, step count, step size) for the three phases."""
        out = []
        for a, b in ((self.t_start, self.t_fault), (self.t_fault, self.t_clear),
                     (self.t_clear, self.t_end)):
            n = _n_steps(b - a, self.step)
            out.append((a, n, (b - a) / n if n else 0.0))
        return out


def _n_steps(length, step):
    """Smallest step count with step size <= ``step`` (0 for an empty segment)."""
    return np.maximum(np.ceil(np.asarray(length) / step - 1e-9), 0).astype(int) * (
        np.asarray(length) > 0)


@dataclass(frozen=True)
class SwingSystem:
    """Everything the integrator needs for one operating point and contingency."""

    h: np.ndarray
    d: np.ndarray
    omega_s: float
    e_mag: np.ndarray
    p_mech: np.ndarray
    delta0: np.ndarray
    y_pre: np.ndarray
    y_fault: np.ndarray
    y_post: np.ndarray

    @property
    def n_machines(self) -> int:
        return len(self.h)


def build_swing_system(pf: PowerFlowSolution, init: MachineInitState,
                       contingency: ContingencySpec,
                       networks: Sequence[ReducedNetwork] | None = None) -> SwingSystem:
    case = pf.case
    pre, on, post = networks if networks is not None else phase_networks(pf, contingency)
    return SwingSystem(
        h=np.array([m.h for m in case.machines]),
        d=np.array([m.d for m in case.machines]),
        omega_s=case.omega_s,
        e_mag=init.e_mag,
        p_mech=init.p_mech,
        delta0=init.delta0,
        y_pre=pre.y_reduced,
        y_fault=on.y_reduced,
        y_post=post.y_reduced,
    )


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    delta: np.ndarray
    omega_dev: np.ndarray
    p_elec: np.ndarray
    t_fault: float
    t_clear: float
    diverged_at: float | None = None

    @property
    def final_state(self) -> SwingState:
        return SwingState(self.delta[-1].copy(), self.omega_dev[-1].copy())

    def index_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


# -- compiled kernel -------------------------------------------------------
# State vectors are [delta_1..m, omega_1..m]. Each batch member is integrated
# on its own, so results never depend on batch composition. Scratch rows of
# ``ws``: 0-3 RK4 stages, 4 stage input, 5/6 cos/sin of the angles. Rows are
# indexed rather than sliced; array views are comparatively costly here.


@njit(cache=True)
def _p_elec(eg, eb, ws, row, out):
    """P_i = sum_j eg_ij cos(d_i - d_j) + eb_ij sin(d_i - d_j) for the
    angles held in ``ws[row]``."""
    m = out.shape[0]
    for i in range(m):
        ws[5, i] = math.cos(ws[row, i])
        ws[6, i] = math.sin(ws[row, i])
    for i in range(m):
        ci = ws[5, i]
        si = ws[6, i]
        acc = 0.0
        for j in range(m):
            cj = ws[5, j]
            sj = ws[6, j]
            acc += eg[i, j] * (ci * cj + si * sj) + eb[i, j] * (si * cj - ci * sj)
        out[i] = acc


@njit(cache=True)
def _rk4_step(eg, eb, pm, accel, damp, y, h, ws, pe):
    m = pm.shape[0]
    n = 2 * m
    for stage in range(4):
        if stage == 0:
            for i in range(n):
                ws[4, i] = y[i]
        else:
            c = h if stage == 3 else 0.5 * h
            for i in range(n):
                ws[4, i] = y[i] + c * ws[stage - 1, i]
        _p_elec(eg, eb, ws, 4, pe)
        for i in range(m):
            ws[stage, i] = ws[4, m + i]
            ws[stage, m + i] = accel[i] * (pm[i] - pe[i] - damp[i] * ws[4, m + i])
    for i in range(n):
        y[i] = y[i] + (h / 6.0) * (ws[0, i] + 2.0 * (ws[1, i] + ws[2, i]) + ws[3, i])


@njit(cache=True)
def _spread(y, m):
    lo = y[0]
    hi = y[0]
    for i in range(1, m):
        lo = min(lo, y[i])
        hi = max(hi, y[i])
    return hi - lo


@njit(cache=True)
def _record(eg, eb, y, ws, rec_y, rec_p, r):
    for i in range(y.shape[0]):
        rec_y[r, i] = y[i]
        ws[4, i] = y[i]
    _p_elec(eg, eb, ws, 4, rec_p[r])


@njit(cache=True)
def _run_member(eg, eb, pm, accel, damp, y, n_seg, h_seg, cutoff, record, rec_y, rec_p):
    """Integrate one member in place through the three segments.

    ``eg``/``eb`` are (3, m, m) per phase. Returns (eta [rad], segment, step)
    where segment and step locate a divergence (-1, -1 if none). With
    ``record`` set, states and electrical powers at every grid point go to
    ``rec_y``/``rec_p``; the power at a switching instant uses the network
    that takes over there.
    """
    m = pm.shape[0]
    ws = np.empty((7, 2 * m))
    pe = np.empty(m)
    r = 0
    if record:
        _record(eg[0], eb[0], y, ws, rec_y, rec_p, 0)
        r = 1
    eta = 0.0
    for seg in range(3):
        n = n_seg[seg]
        h = h_seg[seg]
        egs = eg[seg]
        ebs = eb[seg]
        nxt = seg
        if seg == 0:
            nxt = 1 if n_seg[1] > 0 else 2
        elif seg == 1:
            nxt = 2
        for k in range(1, n + 1):
            _rk4_step(egs, ebs, pm, accel, damp, y, h, ws, pe)
            if record:
                ph = nxt if k == n else seg
                _record(eg[ph], eb[ph], y, ws, rec_y, rec_p, r)
                r += 1
            if seg > 0:
                s = _spread(y, m)
                if not s <= cutoff:
                    return (max(eta, s) if s == s else eta), seg, k
                eta = max(eta, s)
        if seg == 0:
            # the fault instant is the first observed point
            s = _spread(y, m)
            if not s <= cutoff:
                return (s if s == s else eta), 0, n
            eta = s
    return eta, -1, -1


@njit(cache=True)
def _run_batch(eg, eb, pm, accel, damp, Y, n_seg, h_seg, cutoff, eta, div_seg, div_k):
    dummy_y = np.empty((0, Y.shape[1]))
    dummy_p = np.empty((0, pm.shape[1]))
    for b in range(Y.shape[0]):
        e, s, k = _run_member(eg[b], eb[b], pm[b], accel, damp, Y[b], n_seg[b], h_seg[b],
                              cutoff, False, dummy_y, dummy_p)
        eta[b] = e
        div_seg[b] = s
        div_k[b] = k


def _stack(systems: Sequence[SwingSystem]):
    first = systems[0]
    ee = np.stack([np.outer(s.e_mag, s.e_mag) for s in systems])
    Y = np.stack([np.stack([s.y_pre, s.y_fault, s.y_post]) for s in systems])
    eg = np.ascontiguousarray(ee[:, None] * Y.real)
    eb = np.ascontiguousarray(ee[:, None] * Y.imag)
    pm = np.stack([s.p_mech for s in systems]).astype(float)
    accel = first.omega_s / (2.0 * np.asarray(first.h, dtype=float))
    return eg, eb, pm, accel, np.asarray(first.d, dtype=float)


def _initial_state(systems, delta_init=None, omega_init=None) -> np.ndarray:
    B = len(systems)
    delta = (np.stack([s.delta0 for s in systems]) if delta_init is None
             else np.array(delta_init, float).reshape(B, -1))
    omega = (np.zeros_like(delta) if omega_init is None
             else np.array(omega_init, float).reshape(B, -1))
    return np.ascontiguousarray(np.concatenate((delta, omega), axis=1))


def _segment_grid(durations, t_fault, step, horizon, t_start):
    """Per-member step counts and sizes for the pre-fault, fault-on and
    post-fault segments."""
    B = len(durations)
    pre_n = int(_n_steps(t_fault - t_start, step))
    on_n = _n_steps(durations, step)
    post_n = _n_steps(horizon - durations, step)
    n_seg = np.column_stack([np.full(B, pre_n), on_n, post_n]).astype(np.int64)
    h_seg = np.column_stack([np.full(B, (t_fault - t_start) / max(pre_n, 1)),
                             durations / np.maximum(on_n, 1),
                             (horizon - durations) / np.maximum(post_n, 1)])
    return n_seg, h_seg


def prefault_state(systems: Sequence[SwingSystem], t_fault: float = 1.0,
                   step: float = DEFAULT_STEP, t_start: float = 0.0) -> np.ndarray:
    """State rows ``[delta, omega]`` at the fault instant. Passing them to
    ``integrate_batch(fault_state=...)`` skips the pre-fault segment with
    bit-identical results."""
    B = len(systems)
    eg, eb, pm, accel, damp = _stack(systems)
    Y = _initial_state(systems)
    n_seg, h_seg = _segment_grid(np.zeros(B), t_fault, step, 1.0, t_start)
    n_seg[:, 1:] = 0
    _run_batch(eg, eb, pm, accel, damp, Y, n_seg, h_seg, np.inf, np.zeros(B),
               np.zeros(B, np.int64), np.zeros(B, np.int64))
    return Y


def integrate_batch(systems: Sequence[SwingSystem], durations, t_fault: float = 1.0,
                    step: float = DEFAULT_STEP, horizon: float = DEFAULT_HORIZON,
                    t_start: float = 0.0, record: bool = False, delta_init=None,
                    omega_init=None, fault_state=None):
    """Integrate a batch of systems, each with its own fault duration.

    Returns ``(eta_deg, diverged_at, recording)`` where ``eta_deg`` is the
    largest rotor-angle spread over grid points at or after the fault
    instant and ``diverged_at`` is NaN for members that never exceeded the
    divergence spread. ``recording`` is a per-member list of
    (times, delta, omega, p_elec) when ``record`` is true.

    ``fault_state`` (from ``prefault_state``) replaces the pre-fault segment.
    """
    B = len(systems)
    durations = np.broadcast_to(np.asarray(durations, dtype=float), (B,)).copy()
    if np.any(durations < 0) or np.any(durations >= horizon):
        raise ValueError("fault duration must lie in [0, horizon)")
    if t_fault <= t_start:
        raise ValueError("need t_start < t_fault")
    if record and fault_state is not None:
        raise ValueError("recording needs the pre-fault segment")
    eg, eb, pm, accel, damp = _stack(systems)
    m = pm.shape[1]
    n_seg, h_seg = _segment_grid(durations, t_fault, step, horizon, t_start)
    if fault_state is not None:
        Y = np.array(fault_state, dtype=float).reshape(B, 2 * m)
        n_seg[:, 0] = 0
    else:
        Y = _initial_state(systems, delta_init, omega_init)
    starts = np.column_stack([np.full(B, t_start), np.full(B, t_fault), t_fault + durations])
    ends = np.column_stack([np.full(B, t_fault), t_fault + durations,
                            np.full(B, t_fault + horizon)])

    eta = np.zeros(B)
    div_seg = np.full(B, -1, dtype=np.int64)
    div_k = np.full(B, -1, dtype=np.int64)
    recording = None
    if record:
        recording = []
        for b in range(B):
            total = int(n_seg[b].sum()) + 1
            rec_y = np.zeros((total, 2 * m))
            rec_p = np.zeros((total, m))
            e, s, k = _run_member(eg[b], eb[b], pm[b], accel, damp, Y[b], n_seg[b], h_seg[b],
                                  DIVERGENCE_SPREAD, True, rec_y, rec_p)
            eta[b], div_seg[b], div_k[b] = e, s, k
            times = [np.array([t_start])]
            for seg in range(3):
                kk = np.arange(1, n_seg[b, seg] + 1)
                t = starts[b, seg] + kk * h_seg[b, seg]
                if len(t):
                    t[-1] = ends[b, seg]
                times.append(t)
            times = np.concatenate(times)
            used = len(times) if s < 0 else 1 + int(n_seg[b, :s].sum()) + int(k)
            recording.append((times[:used], rec_y[:used, :m], rec_y[:used, m:], rec_p[:used]))
    else:
        _run_batch(eg, eb, pm, accel, damp, Y, n_seg, h_seg, DIVERGENCE_SPREAD, eta,
                   div_seg, div_k)

    diverged_at = np.full(B, np.nan)
    for b in np.flatnonzero(div_seg >= 0):
        s, k = div_seg[b], div_k[b]
        diverged_at[b] = ends[b, s] if k == n_seg[b, s] else starts[b, s] + k * h_seg[b, s]
    return np.degrees(eta), diverged_at, recording


def simulate(system: SwingSystem, schedule: SimulationSchedule) -> Trajectory:
    """Simulate one system over ``schedule`` and record the full trajectory."""
    _, div, recs = integrate_batch(
        [system], schedule.duration, t_fault=schedule.t_fault, step=schedule.step,
        horizon=schedule.t_end - schedule.t_fault, t_start=schedule.t_start, record=True)
    t, d, w, p = recs[0]
    return Trajectory(times=t, delta=d, omega_dev=w, p_elec=p, t_fault=schedule.t_fault,
                      t_clear=schedule.t_clear,
                      diverged_at=None if np.isnan(div[0]) else float(div[0]))


def b_stability_index(traj: Trajectory, from_t: float | None = None) -> float:
    """Largest pairwise rotor-angle separation (degrees) at grid times >= from_t."""
    if traj.delta.shape[1] < 2:
        raise ValueError("B-stability index needs at least two machines")
    from_t = traj.t_fault if from_t is None else from_t
    mask = traj.times >= from_t - 1e-12
    d = traj.delta[mask]
    return float(np.degrees(np.max(d.max(axis=1) - d.min(axis=1))))


def is_b_stable(traj: Trajectory, beta: float = 180.0) -> bool:
    if traj.diverged_at is not None:
        return False
    return b_stability_index(traj) <= beta


@dataclass(frozen=True)
class FeatureRecord:
    cont_no: int
    delta_t0: np.ndarray
    pg_t0: np.ndarray
    qg_t0: np.ndarray
    pd_t0: np.ndarray
    pg_t1: np.ndarray | None = None

    @staticmethod
    def names(n_machines: int = 3, n_loads: int = 3, with_t1: bool = False) -> list[str]:
        cols = ["cont_no"]
        cols += [f"delta{i}_t0" for i in range(1, n_machines + 1)]
        cols += [f"pg{i}_t0" for i in range(1, n_machines + 1)]
        cols += [f"qg{i}_t0" for i in range(1, n_machines + 1)]
        cols += [f"pd{i}_t0" for i in range(1, n_loads + 1)]
        if with_t1:
            cols += [f"pg{i}_t1" for i in range(1, n_machines + 1)]
        return cols

    def values(self, with_t1: bool = False) -> list[float]:
        vals = [float(self.cont_no)]
        for arr in (self.delta_t0, self.pg_t0, self.qg_t0, self.pd_t0):
            vals += [float(v) for v in arr]
        if with_t1:
            if self.pg_t1 is None:
                raise ValueError("record has no t1 block")
            vals += [float(v) for v in self.pg_t1]
        return vals


def bus_generation(pf: PowerFlowSolution, network: ReducedNetwork, e_mag: np.ndarray,
                   delta: np.ndarray) -> np.ndarray:
    """Active generation at each machine bus for internal angles ``delta``:
    machine electrical power plus co-located injections, which behave as
    constant (negative) impedances during transients."""
    pe = electrical_power(network.y_reduced, e_mag, delta)
    p_inj, _ = pf.injection_at_machine_buses()
    mb = pf.case.machine_bus_indices()
    v_bus = np.abs(network.v_recovery @ (e_mag * np.exp(1j * delta)))[mb]
    return pe + p_inj * (v_bus / pf.v[mb]) ** 2


def first_fault_step_state(system: SwingSystem, t_fault: float = 1.0,
                           step: float = DEFAULT_STEP) -> np.ndarray:
    """Rotor angles one nominal step after the fault instant."""
    y = prefault_state([system], t_fault, step)[0]
    eg, eb, pm, accel, damp = _stack([system])
    m = system.n_machines
    _rk4_step(eg[0, 1], eb[0, 1], pm[0], accel, damp, y, step, np.empty((7, 2 * m)), np.empty(m))
    return y[:m]


def capture_features(pf: PowerFlowSolution, init: MachineInitState,
                     contingency: ContingencySpec, system: SwingSystem | None = None,
                     fault_network: ReducedNetwork | None = None, t_fault: float = 1.0,
                     step: float = DEFAULT_STEP, with_t1: bool = True) -> FeatureRecord:
    """Initial-value features plus the bus generation one nominal integration
    step after the fault instant (independent of the clearing time)."""
    pd = np.array([b.p_load for b in pf.case.load_buses()])
    pg_t1 = None
    if with_t1:
        if system is None or fault_network is None:
            nets = phase_networks(pf, contingency)
            fault_network = fault_network or nets[1]
            system = system or build_swing_system(pf, init, contingency, nets)
        delta_t1 = first_fault_step_state(system, t_fault, step)
        pg_t1 = bus_generation(pf, fault_network, init.e_mag, delta_t1)
    return FeatureRecord(cont_no=contingency.number, delta_t0=init.delta0_deg.copy(),
                         pg_t0=pf.p_gen.copy(), qg_t0=pf.q_gen.copy(), pd_t0=pd, pg_t1=pg_t1)


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    m = traj.delta.shape[1]
    header = (["t"] + [f"delta_{i}_deg" for i in range(1, m + 1)]
              + [f"omega_{i}" for i in range(1, m + 1)] + [f"pe_{i}" for i in range(1, m + 1)])
    deg = np.degrees(traj.delta)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in deg[k]]
                       + [repr(float(v)) for v in traj.omega_dev[k]]
                       + [repr(float(v)) for v in traj.p_elec[k]])
