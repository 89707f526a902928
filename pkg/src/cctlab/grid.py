"""Static network model: case data, admittance assembly, Newton power flow,
classical machine initialization and Kron reduction to internal nodes.

All quantities are per unit on ``NetworkCase.system_base``; angles are radians
internally. Load buses are converted to constant impedances at the pre-fault
operating point, renewables to negative constant impedances.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BUS_KINDS = ("slack", "PV", "PQ")
PHASES = ("prefault", "faulton", "postfault")
DEFAULT_FAULT_ADMITTANCE = 1e6


class CaseError(ValueError):
    """Invalid network case or contingency data."""


class NonConvergence(RuntimeError):
    """Newton power flow did not converge."""


class ReductionError(np.linalg.LinAlgError):
    """Kron elimination hit a singular block."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_setpoint: float = 1.0
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt_total: float = 0.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Machine:
    id: str
    bus: int
    h: float
    xd_prime: float
    d: float = 0.0
    # active dispatch for PV machines; ignored for the slack machine
    p_gen: float = 0.0


@dataclass(frozen=True)
class Injection:
    """Fixed (renewable) power injection, kept as constant power in the power flow."""

    id: str
    bus: int
    p: float
    q: float = 0.0


@dataclass(frozen=True)
class ContingencySpec:
    number: int
    fault_bus: int
    cleared_lines: tuple[str, ...]
    fault_admittance: float = DEFAULT_FAULT_ADMITTANCE

    @property
    def fault(self) -> tuple[int, complex] | None:
        if self.fault_admittance == 0:
            return None
        return (self.fault_bus, complex(self.fault_admittance))


@dataclass(frozen=True)
class NetworkCase:
    system_base: float
    frequency: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    machines: tuple[Machine, ...]
    injections: tuple[Injection, ...] = ()
    contingencies: tuple[ContingencySpec, ...] = ()
    name: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise CaseError(f"bus {b.id}: unknown kind {b.kind!r}")
        if sum(b.kind == "slack" for b in self.buses) != 1:
            raise CaseError("case needs exactly one slack bus")
        known = set(ids)
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise CaseError("duplicate line ids")
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise CaseError(f"line {ln.id} references an unknown bus")
            if ln.r < 0 or ln.x <= 0:
                raise CaseError(f"line {ln.id}: need r >= 0 and x > 0")
        machine_buses = [m.bus for m in self.machines]
        if len(set(machine_buses)) != len(machine_buses):
            raise CaseError("machine buses must be distinct")
        for m in self.machines:
            if m.bus not in known:
                raise CaseError(f"machine {m.id} at unknown bus {m.bus}")
            if m.h <= 0 or m.xd_prime <= 0 or m.d < 0:
                raise CaseError(f"machine {m.id}: need h > 0, xd_prime > 0, d >= 0")
        for b in self.buses:
            if b.kind in ("slack", "PV") and b.id not in machine_buses:
                raise CaseError(f"{b.kind} bus {b.id} has no machine")
        for inj in self.injections:
            if inj.bus not in known:
                raise CaseError(f"injection {inj.id} at unknown bus {inj.bus}")
        for c in self.contingencies:
            self.check_contingency(c)

    # -- lookups ---------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_machines(self) -> int:
        return len(self.machines)

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    def machine_bus_indices(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[m.bus] for m in self.machines], dtype=int)

    def load_buses(self) -> list[Bus]:
        """Buses carrying a base active load, in case order."""
        return [b for b in self.buses if b.p_load > 0]

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise CaseError(f"unknown line id {line_id!r}")

    def contingency(self, number: int) -> ContingencySpec:
        for c in self.contingencies:
            if c.number == number:
                return c
        raise CaseError(f"unknown contingency {number}")

    def check_contingency(self, c: ContingencySpec) -> None:
        if not c.cleared_lines:
            raise CaseError(f"contingency {c.number}: cleared_lines is empty")
        if c.fault_bus not in self.bus_index:
            raise CaseError(f"contingency {c.number}: unknown fault bus {c.fault_bus}")
        for lid in c.cleared_lines:
            self.line(lid)
        if not machines_connected(self, c.cleared_lines):
            raise CaseError(f"contingency {c.number}: post-fault network splits the machines")

    # -- scenario application -------------------------------------------

    def with_operating_point(self, p_loads: Sequence[float] | None = None,
                             injections: dict[str, float] | None = None) -> "NetworkCase":
        """Copy with new active loads (reactive scaled at constant power factor)
        and new injection powers keyed by injection id."""
        buses = list(self.buses)
        if p_loads is not None:
            loaded = [i for i, b in enumerate(buses) if b.p_load > 0]
            if len(p_loads) != len(loaded):
                raise CaseError(f"expected {len(loaded)} load values, got {len(p_loads)}")
            for i, p in zip(loaded, p_loads):
                b = buses[i]
                buses[i] = replace(b, p_load=float(p), q_load=b.q_load * float(p) / b.p_load)
        injs = list(self.injections)
        if injections:
            by_id = {inj.id: k for k, inj in enumerate(injs)}
            for key, p in injections.items():
                if key not in by_id:
                    raise CaseError(f"unknown injection {key!r}")
                # unity power factor
                injs[by_id[key]] = replace(injs[by_id[key]], p=float(p), q=0.0)
        return replace(self, buses=tuple(buses), injections=tuple(injs))

    # -- serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkCase":
        return cls(
            system_base=float(data.get("system_base", 100.0)),
            frequency=float(data.get("frequency", 60.0)),
            buses=tuple(Bus(**b) for b in data["buses"]),
            lines=tuple(Line(**ln) for ln in data["lines"]),
            machines=tuple(Machine(**m) for m in data["machines"]),
            injections=tuple(Injection(**i) for i in data.get("injections", [])),
            contingencies=tuple(
                ContingencySpec(
                    number=int(c["number"]),
                    fault_bus=int(c["fault_bus"]),
                    cleared_lines=tuple(c["cleared_lines"]),
                    fault_admittance=float(c.get("fault_admittance", DEFAULT_FAULT_ADMITTANCE)),
                )
                for c in data.get("contingencies", [])
            ),
            name=data.get("name", ""),
        )

    def to_dict(self) -> dict:
        def rows(items):
            return [dict(vars(x)) for x in items]

        contingencies = []
        for c in self.contingencies:
            d = dict(vars(c))
            d["cleared_lines"] = list(c.cleared_lines)
            contingencies.append(d)
        return {
            "name": self.name,
            "system_base": self.system_base,
            "frequency": self.frequency,
            "buses": rows(self.buses),
            "lines": rows(self.lines),
            "machines": rows(self.machines),
            "injections": rows(self.injections),
            "contingencies": contingencies,
        }


def load_case(path: str | Path | None = None) -> NetworkCase:
    """Read a case JSON file; ``None`` loads the bundled WSCC 9-bus case."""
    if path is None:
        text = resources.files("cctlab.data").joinpath("wscc9.json").read_text()
    else:
        text = Path(path).read_text()
    return NetworkCase.from_dict(json.loads(text))


def default_case() -> NetworkCase:
    return load_case(None)


def machines_connected(case: NetworkCase, removed_lines: Iterable[str] = ()) -> bool:
    """True when all machine buses share one connected component.

    Load-only buses may be islanded (their load is lost)."""
    removed = set(removed_lines)
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for ln in case.lines:
        if ln.id in removed:
            continue
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    targets = {m.bus for m in case.machines}
    if not targets:
        return True
    start = next(iter(targets))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return targets <= seen


def _fully_connected(case: NetworkCase, removed: set[str]) -> bool:
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for ln in case.lines:
        if ln.id not in removed:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
    start = case.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == case.n_bus


def build_ybus(case: NetworkCase, removed_lines: Iterable[str] = (),
               fault: tuple[int, complex] | None = None) -> np.ndarray:
    """Bus admittance matrix in case bus order.

    Line charging is split b/2 at each end; ``fault`` adds a shunt admittance
    on the diagonal of the faulted bus.
    """
    removed = set(removed_lines)
    known = {ln.id for ln in case.lines}
    unknown = removed - known
    if unknown:
        raise CaseError(f"unknown line ids: {sorted(unknown)}")
    if removed and not _fully_connected(case, removed):
        logger.debug("network is disconnected after removing %s", sorted(removed))

    idx = case.bus_index
    Y = np.zeros((case.n_bus, case.n_bus), dtype=complex)
    for ln in case.lines:
        if ln.id in removed:
            continue
        i, k = idx[ln.from_bus], idx[ln.to_bus]
        y = ln.series_admittance
        ysh = 0.5j * ln.b_shunt_total
        Y[i, i] += y + ysh
        Y[k, k] += y + ysh
        Y[i, k] -= y
        Y[k, i] -= y
    if fault is not None:
        bus, yf = fault
        Y[idx[bus], idx[bus]] += yf
    return Y


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged operating point.

    ``p_gen``/``q_gen`` are the total generation at each machine's bus
    (machine plus any co-located injection); ``case`` is the operating case
    the solution belongs to (scenario already applied).
    """

    v: np.ndarray
    theta: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    max_mismatch: float
    iterations: int
    case: NetworkCase = field(repr=False)

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)

    def injection_at_machine_buses(self) -> tuple[np.ndarray, np.ndarray]:
        """(p, q) of the fixed injections located at each machine's bus."""
        p = np.zeros(self.case.n_machines)
        q = np.zeros(self.case.n_machines)
        pos = {m.bus: k for k, m in enumerate(self.case.machines)}
        for inj in self.case.injections:
            if inj.bus in pos:
                p[pos[inj.bus]] += inj.p
                q[pos[inj.bus]] += inj.q
        return p, q

    @property
    def p_machine(self) -> np.ndarray:
        return self.p_gen - self.injection_at_machine_buses()[0]

    @property
    def q_machine(self) -> np.ndarray:
        return self.q_gen - self.injection_at_machine_buses()[1]


def _bus_vectors(case: NetworkCase):
    n = case.n_bus
    idx = case.bus_index
    p_load = np.array([b.p_load for b in case.buses])
    q_load = np.array([b.q_load for b in case.buses])
    p_inj = np.zeros(n)
    q_inj = np.zeros(n)
    for inj in case.injections:
        p_inj[idx[inj.bus]] += inj.p
        q_inj[idx[inj.bus]] += inj.q
    return p_load, q_load, p_inj, q_inj


def apply_scenario(case: NetworkCase, scenario=None) -> NetworkCase:
    """Operating case for a scenario (any object with ``p_loads``,
    ``p_solar``, ``p_wind``); ``None`` keeps the base values."""
    if scenario is None:
        return case
    inj = {}
    ids = {i.id for i in case.injections}
    if "solar" in ids:
        inj["solar"] = scenario.p_solar
    if "wind" in ids:
        inj["wind"] = scenario.p_wind
    return case.with_operating_point(p_loads=scenario.p_loads, injections=inj)


def solve_power_flow(case: NetworkCase, scenario=None, tol: float = 1e-8,
                     max_iter: int = 30) -> PowerFlowSolution:
    """Newton-Raphson power flow in polar coordinates from a flat start."""
    op = apply_scenario(case, scenario)
    n = op.n_bus
    Y = build_ybus(op)
    p_load, q_load, p_inj, q_inj = _bus_vectors(op)
    idx = op.bus_index
    p_sched = p_inj - p_load
    q_sched = q_inj - q_load
    for m in op.machines:
        if op.buses[idx[m.bus]].kind == "PV":
            p_sched[idx[m.bus]] += m.p_gen

    kinds = [b.kind for b in op.buses]
    pv_pq = np.array([i for i in range(n) if kinds[i] != "slack"], dtype=int)
    pq = np.array([i for i in range(n) if kinds[i] == "PQ"], dtype=int)

    v = np.ones(n)
    for i, b in enumerate(op.buses):
        if b.kind != "PQ":
            v[i] = b.v_setpoint
    theta = np.zeros(n)

    def mismatch(v, theta):
        V = v * np.exp(1j * theta)
        S = V * np.conj(Y @ V)
        return S, np.r_[S.real[pv_pq] - p_sched[pv_pq], S.imag[pq] - q_sched[pq]]

    S, F = mismatch(v, theta)
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while err > tol:
        if it >= max_iter:
            raise NonConvergence(f"power flow did not converge in {max_iter} iterations "
                                 f"(mismatch {err:.3e})")
        V = v * np.exp(1j * theta)
        I = Y @ V
        diagV = np.diag(V)
        dS_dth = 1j * diagV @ np.conj(np.diag(I) - Y @ diagV)
        Vn = np.exp(1j * theta)
        dS_dv = diagV @ np.conj(Y @ np.diag(Vn)) + np.diag(Vn) @ np.diag(np.conj(I))
        J = np.block([
            [dS_dth.real[np.ix_(pv_pq, pv_pq)], dS_dv.real[np.ix_(pv_pq, pq)]],
            [dS_dth.imag[np.ix_(pq, pv_pq)], dS_dv.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence("singular power-flow Jacobian") from exc
        theta[pv_pq] += dx[: len(pv_pq)]
        v[pq] += dx[len(pv_pq):]
        it += 1
        S, F = mismatch(v, theta)
        err = np.max(np.abs(F)) if F.size else 0.0
        if not np.isfinite(err):
            raise NonConvergence("power flow diverged")

    mb = op.machine_bus_indices()
    p_gen = S.real[mb] + p_load[mb]
    q_gen = S.imag[mb] + q_load[mb]
    return PowerFlowSolution(v=v, theta=theta, p_gen=p_gen, q_gen=q_gen,
                             max_mismatch=float(err), iterations=it, case=op)


@dataclass(frozen=True)
class MachineInitState:
    e_mag: np.ndarray
    delta0: np.ndarray
    p_mech: np.ndarray

    @property
    def delta0_deg(self) -> np.ndarray:
        return np.degrees(self.delta0)

    @property
    def e_phasor(self) -> np.ndarray:
        return self.e_mag * np.exp(1j * self.delta0)


def init_machines(pf: PowerFlowSolution) -> MachineInitState:
    """Constant EMF behind transient reactance from the power-flow solution."""
    case = pf.case
    mb = case.machine_bus_indices()
    V = pf.voltage[mb]
    S = pf.p_machine + 1j * pf.q_machine
    I = np.conj(S / V)
    xd = np.array([m.xd_prime for m in case.machines])
    E = V + 1j * xd * I
    return MachineInitState(e_mag=np.abs(E), delta0=np.angle(E),
                            p_mech=(E * np.conj(I)).real)


@dataclass(frozen=True)
class ReducedNetwork:
    """Admittance among machine internal nodes for one topology phase.

    ``v_recovery`` maps internal EMF phasors to bus voltages (n_bus x m).
    """

    phase: str
    y_reduced: np.ndarray
    v_recovery: np.ndarray


def reduce_to_internal_nodes(pf: PowerFlowSolution, removed_lines: Iterable[str] = (),
                             fault: tuple[int, complex] | None = None,
                             phase: str = "prefault") -> ReducedNetwork:
    """Kron-reduce the augmented network (buses + internal nodes) onto the
    internal nodes. Loads and injections become constant admittances at the
    power-flow voltages."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    case = pf.case
    n, m = case.n_bus, case.n_machines
    Ybus = build_ybus(case, removed_lines, fault)
    p_load, q_load, p_inj, q_inj = _bus_vectors(case)
    Ybus[np.diag_indices(n)] += ((p_load - p_inj) - 1j * (q_load - q_inj)) / pf.v**2

    mb = case.machine_bus_indices()
    yd = np.array([1.0 / (1j * mc.xd_prime) for mc in case.machines])
    Ybb = Ybus
    Ybb[mb, mb] += yd
    Yib = np.zeros((m, n), dtype=complex)
    Yib[np.arange(m), mb] = -yd
    Yii = np.diag(yd)
    try:
        # V_bus = -Ybb^{-1} Ybi E
        recovery = -np.linalg.solve(Ybb, Yib.T)
    except np.linalg.LinAlgError as exc:
        raise ReductionError(f"singular elimination block in {phase} network") from exc
    if not np.all(np.isfinite(recovery)):
        raise ReductionError(f"non-finite reduction in {phase} network")
    Yred = Yii + Yib @ recovery
    return ReducedNetwork(phase=phase, y_reduced=Yred, v_recovery=recovery)


def phase_networks(pf: PowerFlowSolution, contingency: ContingencySpec
                   ) -> tuple[ReducedNetwork, ReducedNetwork, ReducedNetwork]:
    """Pre-fault, fault-on and post-fault reduced networks for a contingency."""
    pre = reduce_to_internal_nodes(pf, phase="prefault")
    on = reduce_to_internal_nodes(pf, fault=contingency.fault, phase="faulton")
    post = reduce_to_internal_nodes(pf, removed_lines=contingency.cleared_lines,
                                    phase="postfault")
    return pre, on, post


def electrical_power(y_reduced: np.ndarray, e_mag: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """P_e,i = Re{E_i conj(sum_j Y_ij E_j)} at the given internal angles."""
    E = e_mag * np.exp(1j * delta)
    return (E * np.conj(y_reduced @ E)).real
