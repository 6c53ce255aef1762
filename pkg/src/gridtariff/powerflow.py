"""Newton-Raphson AC power flow, branch flows, the Jacobian and the stability margin.

Unknown/equation ordering used everywhere (including the exported Jacobian):
angles of ``pv + pq`` buses first, then magnitudes of ``pq`` buses; rows are
P of ``pv + pq`` buses followed by Q of ``pq`` buses.  Within each group buses
appear in case order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConvergenceError, SingularJacobianError
from .netmodel import PQ, PV, SLACK, NetworkCase


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 30
    enforce_q_limits: bool = False
    flat_start: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense bus admittance matrix with the bus ids labelling rows/columns."""

    matrix: np.ndarray
    bus_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.bus_ids)

    @property
    def G(self) -> np.ndarray:
        return np.ascontiguousarray(self.matrix.real)

    @property
    def B(self) -> np.ndarray:
        return np.ascontiguousarray(self.matrix.imag)

    def entries(self) -> dict[tuple[int, int], complex]:
        """Non-zero entries keyed by (bus id, bus id)."""
        rows, cols = np.nonzero(self.matrix)
        return {(self.bus_ids[i], self.bus_ids[j]): complex(self.matrix[i, j])
                for i, j in zip(rows, cols)}


@dataclass(frozen=True)
class BranchFlows:
    """Per-branch terminal injections and losses in MW/MVar (0 for out-of-service)."""

    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    @property
    def loss_p(self) -> np.ndarray:
        return self.p_from + self.p_to

    @property
    def loss_q(self) -> np.ndarray:
        return self.q_from + self.q_to

    @property
    def s_from(self) -> np.ndarray:
        return np.hypot(self.p_from, self.q_from)

    @property
    def s_to(self) -> np.ndarray:
        return np.hypot(self.p_to, self.q_to)


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    v_ang: np.ndarray  # degrees
    p_gen: np.ndarray  # MW per generator
    q_gen: np.ndarray  # MVar per generator
    flows: BranchFlows
    iterations: int
    converged: bool
    max_mismatch: float
    shunt_p: float = 0.0  # MW consumed by bus shunt conductances and banks
    shunt_q_inj: float = 0.0  # MVar injected by bus shunt susceptances and banks
    switched_to_pq: tuple[int, ...] = field(default=())

    @property
    def branch_losses(self) -> tuple[np.ndarray, np.ndarray]:
        return self.flows.loss_p, self.flows.loss_q

    @property
    def total_loss_p(self) -> float:
        return float(np.sum(self.flows.loss_p))

    @property
    def total_loss_q(self) -> float:
        return float(np.sum(self.flows.loss_q))

    @property
    def v_ang_rad(self) -> np.ndarray:
        return np.deg2rad(self.v_ang)


# ---------------------------------------------------------------------------
# Admittance
# ---------------------------------------------------------------------------

def branch_admittances(case: NetworkCase):
    """π-model terminal admittances (Yff, Yft, Ytf, Ytt) with the tap on the from side."""
    nl = len(case.branches)
    yff = np.zeros(nl, complex)
    yft = np.zeros(nl, complex)
    ytf = np.zeros(nl, complex)
    ytt = np.zeros(nl, complex)
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.b_charging / 2.0
        t = br.tap
        yff[k] = (ys + bc) / (t * t)
        yft[k] = -ys / t
        ytf[k] = -ys / t
        ytt[k] = ys + bc
    return yff, yft, ytf, ytt


def shunt_admittances(case: NetworkCase) -> np.ndarray:
    """Per-bus shunt admittance in per-unit (bus g/b plus engaged shunt-bank steps)."""
    idx = case.bus_index()
    ysh = np.array([complex(b.g_shunt, b.b_shunt) for b in case.buses])
    for bank in case.shunt_banks:
        ysh[idx[bank.bus]] += 1j * bank.q_mvar / case.base_mva
    return ysh


def build_ybus(case: NetworkCase) -> AdmittanceMatrix:
    idx = case.bus_index()
    n = len(case.buses)
    Y = np.zeros((n, n), complex)
    yff, yft, ytf, ytt = branch_admittances(case)
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        Y[f, f] += yff[k]
        Y[f, t] += yft[k]
        Y[t, f] += ytf[k]
        Y[t, t] += ytt[k]
    Y[np.diag_indices(n)] += shunt_admittances(case)
    return AdmittanceMatrix(Y, tuple(b.id for b in case.buses))


# ---------------------------------------------------------------------------
# Bus classification and schedules
# ---------------------------------------------------------------------------

@dataclass
class _Layout:
    slack: int
    pv: list[int]
    pq: list[int]

    @property
    def pvpq(self) -> np.ndarray:
        return np.array(self.pv + self.pq, dtype=np.intp)

    @property
    def pq_arr(self) -> np.ndarray:
        return np.array(self.pq, dtype=np.intp)


def bus_layout(case: NetworkCase, forced_pq=()) -> _Layout:
    idx = case.bus_index()
    gen_buses = {g.bus for g in case.generators}
    slack, pv, pq = None, [], []
    for i, b in enumerate(case.buses):
        if b.kind == SLACK:
            slack = i
        elif b.kind == PV and b.id in gen_buses and b.id not in forced_pq:
            pv.append(i)
        else:
            pq.append(i)
    assert slack is not None and slack == idx[case.slack.id]
    return _Layout(slack, pv, pq)


def _schedule(case: NetworkCase, layout: _Layout, q_fixed: dict[int, float]):
    """Specified net injections (per-unit) and voltage setpoints per bus."""
    idx = case.bus_index()
    n = len(case.buses)
    p = np.array([-b.p_load for b in case.buses], float)
    q = np.array([-b.q_load for b in case.buses], float)
    vset = np.array([b.v_mag for b in case.buses], float)
    controlled = set()
    regulating = {layout.slack, *layout.pv}
    for g in case.generators:
        i = idx[g.bus]
        p[i] += g.p_gen
        if i in regulating:
            if i not in controlled:
                vset[i] = g.v_set
                controlled.add(i)
        elif g.bus in q_fixed:
            pass
        else:
            q[i] += g.q_gen
    for bus_id, qv in q_fixed.items():
        q[idx[bus_id]] += qv
    return p / case.base_mva, q / case.base_mva, vset


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------

def branch_flows_and_losses(case: NetworkCase, v_mag, v_ang) -> BranchFlows:
    """Terminal flows (MW/MVar) for a voltage state; ``v_ang`` in degrees."""
    idx = case.bus_index()
    V = np.asarray(v_mag, float) * np.exp(1j * np.deg2rad(np.asarray(v_ang, float)))
    yff, yft, ytf, ytt = branch_admittances(case)
    f = np.array([idx[br.from_bus] for br in case.branches], dtype=np.intp)
    t = np.array([idx[br.to_bus] for br in case.branches], dtype=np.intp)
    if len(case.branches) == 0:
        z = np.zeros(0)
        return BranchFlows(z, z, z, z)
    Vf, Vt = V[f], V[t]
    s_from = Vf * np.conj(yff * Vf + yft * Vt) * case.base_mva
    s_to = Vt * np.conj(ytf * Vf + ytt * Vt) * case.base_mva
    return BranchFlows(s_from.real.copy(), s_from.imag.copy(), s_to.real.copy(), s_to.imag.copy())


# ---------------------------------------------------------------------------
# Newton-Raphson
# ---------------------------------------------------------------------------

def _mismatch(G, B, vm, va, p_spec, q_spec, pvpq, pq):
    P, Q = kernels.power_injections(G, B, vm, va)
    return np.concatenate([p_spec[pvpq] - P[pvpq], q_spec[pq] - Q[pq]])


def _newton(G, B, vm, va, p_spec, q_spec, layout, opts):
    pvpq, pq = layout.pvpq, layout.pq_arr
    npvpq = len(pvpq)
    F = _mismatch(G, B, vm, va, p_spec, q_spec, pvpq, pq)
    err = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while err >= opts.tolerance and it < opts.max_iterations:
        J = kernels.jacobian_polar(G, B, vm, va, pvpq, pq)
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("singular Jacobian (islanded or degenerate case)") from None
        if not np.all(np.isfinite(dx)):
            break
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        it += 1
        F = _mismatch(G, B, vm, va, p_spec, q_spec, pvpq, pq)
        err = float(np.max(np.abs(F)))
        if not math.isfinite(err):
            break
    return vm, va, it, err


def solve_newton(case: NetworkCase, opts: SolverOptions | None = None) -> PowerFlowSolution:
    """Solve the AC power flow.  Non-convergence is reported via ``converged=False``."""
    opts = opts or SolverOptions()
    ybus = build_ybus(case)
    G, B = ybus.G, ybus.B
    forced: dict[int, float] = {}
    total_it = 0
    while True:
        layout = bus_layout(case, forced)
        p_spec, q_spec, vset = _schedule(case, layout, forced)
        if opts.flat_start:
            vm = np.ones(len(case.buses))
            va = np.zeros(len(case.buses))
            va[layout.slack] = math.radians(case.buses[layout.slack].v_ang)
        else:
            vm = np.array([b.v_mag for b in case.buses], float)
            va = np.deg2rad([b.v_ang for b in case.buses])
        for i in (layout.slack, *layout.pv):
            vm[i] = vset[i]
        vm, va, it, err = _newton(G, B, vm, va, p_spec, q_spec, layout, opts)
        total_it += it
        converged = err < opts.tolerance
        if not (converged and opts.enforce_q_limits):
            break
        newly = _q_limit_violations(case, G, B, vm, va, layout)
        if not newly:
            break
        forced.update(newly)
    return _assemble(case, G, B, vm, va, layout, total_it, converged, err, tuple(forced))


def _bus_generation(case, G, B, vm, va):
    P, Q = kernels.power_injections(G, B, vm, va)
    p_bus = P * case.base_mva + np.array([b.p_load for b in case.buses])
    q_bus = Q * case.base_mva + np.array([b.q_load for b in case.buses])
    return p_bus, q_bus


def _q_limit_violations(case, G, B, vm, va, layout):
    idx = case.bus_index()
    _, q_bus = _bus_generation(case, G, B, vm, va)
    out = {}
    pv = set(layout.pv)
    for bus_i in pv:
        gens = [g for g in case.generators if idx[g.bus] == bus_i]
        qmin = sum(g.q_min for g in gens)
        qmax = sum(g.q_max for g in gens)
        bus_id = case.buses[bus_i].id
        if q_bus[bus_i] > qmax + 1e-9:
            out[bus_id] = qmax
        elif q_bus[bus_i] < qmin - 1e-9:
            out[bus_id] = qmin
    return out


def _assemble(case, G, B, vm, va, layout, iterations, converged, err, switched):
    idx = case.bus_index()
    p_bus, q_bus = _bus_generation(case, G, B, vm, va)
    count: dict[int, int] = {}
    for g in case.generators:
        count[g.bus] = count.get(g.bus, 0) + 1
    regulating = {layout.slack, *layout.pv}
    p_gen = np.empty(len(case.generators))
    q_gen = np.empty(len(case.generators))
    for k, g in enumerate(case.generators):
        i = idx[g.bus]
        p_gen[k] = p_bus[i] / count[g.bus] if i == layout.slack else g.p_gen
        if i in regulating or g.bus in switched:
            q_gen[k] = q_bus[i] / count[g.bus]
        else:
            q_gen[k] = g.q_gen
    v_ang = np.rad2deg(va)
    flows = branch_flows_and_losses(case, vm, v_ang)
    ysh = shunt_admittances(case)
    shunt_p = float(np.sum(ysh.real * vm ** 2)) * case.base_mva
    shunt_q = float(np.sum(ysh.imag * vm ** 2)) * case.base_mva
    return PowerFlowSolution(
        bus_ids=tuple(b.id for b in case.buses), v_mag=vm.copy(), v_ang=v_ang,
        p_gen=p_gen, q_gen=q_gen, flows=flows, iterations=iterations,
        converged=bool(converged), max_mismatch=float(err),
        shunt_p=shunt_p, shunt_q_inj=shunt_q, switched_to_pq=switched)


def solve_or_raise(case: NetworkCase, opts: SolverOptions | None = None) -> PowerFlowSolution:
    sol = solve_newton(case, opts)
    if not sol.converged:
        raise ConvergenceError(
            f"power flow did not converge after {sol.iterations} iterations "
            f"(max mismatch {sol.max_mismatch:.3g} pu)")
    return sol


# ---------------------------------------------------------------------------
# Jacobian and stability margin
# ---------------------------------------------------------------------------

def _state(case, state):
    if isinstance(state, PowerFlowSolution):
        return state.v_mag, state.v_ang_rad
    vm, va_deg = state
    return np.asarray(vm, float), np.deg2rad(np.asarray(va_deg, float))


def jacobian(case: NetworkCase, state) -> np.ndarray:
    """∂(P, Q)/∂(θ, |V|) at ``state`` (a solution or ``(v_mag, v_ang_deg)``).

    Angles are in radians and powers in per-unit.  Row/column order is given
    in the module docstring; PV buses switched to PQ during Q-limit enforcement
    are treated as PQ.
    """
    vm, va = _state(case, state)
    forced = state.switched_to_pq if isinstance(state, PowerFlowSolution) else ()
    layout = bus_layout(case, forced)
    ybus = build_ybus(case)
    return kernels.jacobian_polar(ybus.G, ybus.B, np.ascontiguousarray(vm),
                                  np.ascontiguousarray(va), layout.pvpq, layout.pq_arr)


def min_singular_value(matrix) -> float:
    return float(np.linalg.svd(np.asarray(matrix, float), compute_uv=False).min())


def stability_margin(case: NetworkCase, solution: PowerFlowSolution, jac=None) -> float:
    """Smallest singular value of the reduced power-flow Jacobian.

    ``jac`` overrides the matrix (test seam).
    """
    if jac is None:
        if not solution.converged:
            raise ConvergenceError("stability margin needs a converged solution")
        jac = jacobian(case, solution)
    return min_singular_value(jac)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

BUS_CSV_COLUMNS = ("bus", "kind", "v_mag", "v_ang", "p_gen", "q_gen", "p_load", "q_load")
BRANCH_CSV_COLUMNS = ("branch", "from", "to", "p_from", "q_from", "p_to", "q_to",
                      "loss_p", "loss_q", "status")


def _g(x: float) -> str:
    return repr(float(x))


def bus_rows(case: NetworkCase, sol: PowerFlowSolution) -> list[dict]:
    gen_p: dict[int, float] = {}
    gen_q: dict[int, float] = {}
    for g, pg, qg in zip(case.generators, sol.p_gen, sol.q_gen):
        gen_p[g.bus] = gen_p.get(g.bus, 0.0) + float(pg)
        gen_q[g.bus] = gen_q.get(g.bus, 0.0) + float(qg)
    rows = []
    for i, b in enumerate(case.buses):
        rows.append({
            "bus": b.id, "kind": b.kind, "v_mag": float(sol.v_mag[i]), "v_ang": float(sol.v_ang[i]),
            "p_gen": gen_p.get(b.id, 0.0), "q_gen": gen_q.get(b.id, 0.0),
            "p_load": b.p_load, "q_load": b.q_load,
        })
    return rows


def branch_rows(case: NetworkCase, sol: PowerFlowSolution) -> list[dict]:
    fl = sol.flows
    return [{
        "branch": k + 1, "from": br.from_bus, "to": br.to_bus,
        "p_from": float(fl.p_from[k]), "q_from": float(fl.q_from[k]),
        "p_to": float(fl.p_to[k]), "q_to": float(fl.q_to[k]),
        "loss_p": float(fl.loss_p[k]), "loss_q": float(fl.loss_q[k]),
        "status": int(br.status),
    } for k, br in enumerate(case.branches)]


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_g(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def solution_to_csv(case: NetworkCase, sol: PowerFlowSolution) -> tuple[str, str]:
    """(bus table, branch table) as CSV text."""
    return _csv(BUS_CSV_COLUMNS, bus_rows(case, sol)), _csv(BRANCH_CSV_COLUMNS, branch_rows(case, sol))


def solution_to_dict(case: NetworkCase, sol: PowerFlowSolution) -> dict:
    return {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "max_mismatch": sol.max_mismatch,
        "total_loss_p": sol.total_loss_p,
        "total_loss_q": sol.total_loss_q,
        "shunt_q_injection": sol.shunt_q_inj,
        "buses": bus_rows(case, sol),
        "branches": branch_rows(case, sol),
    }


def solution_to_json(case: NetworkCase, sol: PowerFlowSolution) -> str:
    return json.dumps(solution_to_dict(case, sol), indent=2)


__all__ = [
    "AdmittanceMatrix", "BranchFlows", "PowerFlowSolution", "SolverOptions",
    "branch_flows_and_losses", "build_ybus", "jacobian", "min_singular_value",
    "solution_to_csv", "solution_to_json", "solve_newton", "solve_or_raise",
    "stability_margin", "PQ", "PV",
]
