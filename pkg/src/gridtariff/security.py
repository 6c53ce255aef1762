"""N-1 contingency sweep, branch security factors and maximum allowed loading levels."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, GridTariffError, SingularJacobianError
from .netmodel import NetworkCase
from .powerflow import BranchFlows, SolverOptions, solve_newton

FLOW_METRICS = ("mva", "p", "q")
NEGLIGIBLE_FLOW_PU = 1e-6


def flow_magnitude(flows: BranchFlows, metric: str = "mva") -> np.ndarray:
    """Branch loading seen at the from-end terminal: |S|, |P| or |Q|."""
    if metric == "mva":
        return flows.s_from
    if metric == "p":
        return np.abs(flows.p_from)
    if metric == "q":
        return np.abs(flows.q_from)
    raise ValueError(f"unknown flow metric {metric!r}")


@dataclass(frozen=True)
class BranchSecurity:
    branch: int  # 1-based position in case.branches
    from_bus: int
    to_bus: int
    base_flow: float
    max_contingency_flow: float
    critical_outage: int | None
    security_factor: float
    negligible_flow: bool = False


@dataclass(frozen=True)
class SecurityReport:
    branches: tuple[BranchSecurity, ...]
    skipped_outages: tuple[tuple[int, str], ...] = ()
    metric: str = "mva"

    def by_branch(self) -> dict[int, BranchSecurity]:
        return {b.branch: b for b in self.branches}

    def factors(self) -> dict[int, float]:
        return {b.branch: b.security_factor for b in self.branches}


@dataclass(frozen=True)
class MallRow:
    branch: int
    capacity: float
    security_factor: float
    mall: float


def mall(capacity: float, sf: float) -> float:
    """Maximum allowed loading level: capacity shrunk by the security factor."""
    if not sf > 0:
        raise GridTariffError(f"security factor must be positive, got {sf}", code="invalid-sf")
    return capacity / sf


def base_case_flows(case: NetworkCase, metric: str = "mva",
                    opts: SolverOptions | None = None) -> dict[int, float]:
    """Loading of every in-service branch under normal topology, keyed by branch number."""
    sol = solve_newton(case, opts)
    if not sol.converged:
        raise ConvergenceError("base case power flow did not converge")
    mag = flow_magnitude(sol.flows, metric)
    return {k + 1: float(mag[k]) for k, br in enumerate(case.branches) if br.status}


def _outage_flows(case: NetworkCase, k: int, metric: str, opts):
    """Flows with branch k out, or (None, reason) when it islands or fails."""
    outaged = case.without_branch(k)
    if not outaged.is_connected():
        return None, "islanding"
    try:
        sol = solve_newton(outaged, opts)
    except SingularJacobianError:
        return None, "singular-jacobian"
    if not sol.converged:
        return None, "non-convergence"
    return flow_magnitude(sol.flows, metric), ""


def contingency_sweep(case: NetworkCase, metric: str = "mva", jobs: int = 1,
                      opts: SolverOptions | None = None) -> SecurityReport:
    """Single-branch (N-1) outage sweep over every in-service branch.

    For each monitored branch the maximum loading across all other admissible
    outages is kept; islanding or non-convergent outages are recorded as skips.
    Results are merged in branch order, so ``jobs`` never changes the output.
    """
    sol = solve_newton(case, opts)
    if not sol.converged:
        raise ConvergenceError("base case power flow did not converge")
    base = flow_magnitude(sol.flows, metric)
    in_service = [k for k, br in enumerate(case.branches) if br.status]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda k: _outage_flows(case, k, metric, opts), in_service))
    else:
        results = [_outage_flows(case, k, metric, opts) for k in in_service]

    skipped = tuple((k + 1, reason) for k, (flows, reason) in zip(in_service, results)
                    if flows is None)
    evaluated = [(k, flows) for k, (flows, _) in zip(in_service, results) if flows is not None]

    threshold = NEGLIGIBLE_FLOW_PU * case.base_mva
    rows = []
    for b in in_service:
        best, critical = None, None
        for o, flows in evaluated:
            if o == b:
                continue
            if best is None or flows[b] > best:
                best, critical = float(flows[b]), o + 1
        br = case.branches[b]
        base_b = float(base[b])
        negligible = base_b < threshold
        if best is None:
            max_flow, sf = base_b, 1.0
        else:
            max_flow = best
            sf = 1.0 if negligible else best / base_b
        rows.append(BranchSecurity(b + 1, br.from_bus, br.to_bus, base_b, max_flow,
                                   critical, sf, negligible))
    return SecurityReport(tuple(rows), skipped, metric)


def security_factor_with_injection(case: NetworkCase, node: int, delta_p: float = 0.0,
                                   delta_q: float = 0.0, metric: str = "mva", jobs: int = 1,
                                   opts: SolverOptions | None = None) -> SecurityReport:
    """Repeat the sweep after adding ``delta_p`` MW / ``delta_q`` MVar of load at ``node``."""
    perturbed = case.add_load(node, delta_p, delta_q)
    return contingency_sweep(perturbed, metric, jobs, opts)


def mall_table(case: NetworkCase, report: SecurityReport) -> list[MallRow]:
    return [MallRow(r.branch, case.branches[r.branch - 1].rating, r.security_factor,
                    mall(case.branches[r.branch - 1].rating, r.security_factor))
            for r in report.branches]


SWEEP_CSV_COLUMNS = ("branch", "from", "to", "base_flow", "max_contingency_flow",
                     "critical_outage", "sf", "sf_injected", "mall")


def sweep_csv(case: NetworkCase, report: SecurityReport,
              injected: SecurityReport | None = None) -> str:
    """Table of per-branch security factors; ``sf_injected`` blank without an injection run."""
    inj = injected.factors() if injected is not None else {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_CSV_COLUMNS)
    for r in report.branches:
        cap = case.branches[r.branch - 1].rating
        w.writerow([
            r.branch, r.from_bus, r.to_bus, repr(r.base_flow), repr(r.max_contingency_flow),
            "" if r.critical_outage is None else r.critical_outage,
            repr(r.security_factor),
            repr(inj[r.branch]) if r.branch in inj else "",
            repr(mall(cap, r.security_factor)) if cap > 0 else "",
        ])
    return buf.getvalue()

