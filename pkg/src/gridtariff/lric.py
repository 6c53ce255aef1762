"""Long-run incremental cost (LRIC) nodal charges, with or without security factors.

Per branch: the years until growing load reaches capacity (or capacity / SF),
the present value of the reinforcement at that horizon, and the change in
that present value caused by a nodal injection.  Charges are annualized and
divided by the injection size.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

from .errors import ConvergenceError, GridTariffError, ZeroInjectionError
from .netmodel import EconomicParams, NetworkCase
from .powerflow import SolverOptions, solve_newton
from .security import contingency_sweep, flow_magnitude

log = logging.getLogger(__name__)

WITH_SF, WITHOUT_SF = "with_sf", "without_sf"
CHAPTER1, CHAPTER2 = "chapter1", "chapter2"
KIND_P, KIND_Q = "P", "Q"


@dataclass(frozen=True)
class HorizonEntry:
    branch: int
    n: float
    n_new: float
    uses_security: bool
    overloaded: bool = False


@dataclass(frozen=True)
class BranchContribution:
    branch: int
    capacity: float
    effective_capacity: float
    loading: float
    loading_new: float
    horizon: HorizonEntry
    delta_pv: float
    contribution: float  # currency / yr, before division by the injection


@dataclass(frozen=True)
class LricCharges:
    node: int
    delta_injection: float
    power_kind: str
    security_mode: str
    formulation: str
    charge: float
    contributions: tuple[BranchContribution, ...] = field(default=())
    excluded: tuple[int, ...] = ()


def reinforcement_horizon(capacity: float, loading: float, r: float) -> float:
    """Years for ``loading`` growing at rate ``r`` to reach ``capacity``.

    Negative when already overloaded; ``inf`` for zero loading.
    """
    if capacity <= 0 or r <= 0 or loading < 0:
        raise GridTariffError("horizon needs capacity > 0, loading >= 0, r > 0", code="invalid-horizon")
    if loading == 0:
        return math.inf
    return (math.log(capacity) - math.log(loading)) / math.log1p(r)


def horizon_with_security(capacity: float, sf: float, loading: float, r: float) -> float:
    """Horizon against the security-constrained capacity ``capacity / sf``."""
    if sf <= 0:
        raise GridTariffError("security factor must be positive", code="invalid-sf")
    return reinforcement_horizon(capacity / sf, loading, r)


def is_overloaded(capacity: float, loading: float) -> bool:
    return loading > capacity


def present_value(asset: float, d: float, n: float) -> float:
    if n == math.inf:
        return 0.0
    return asset * (1.0 + d) ** (-n)


def delta_pv(asset: float, d: float, n: float, n_new: float) -> float:
    """Change in present value when the horizon moves from ``n`` to ``n_new``."""
    return present_value(asset, d, n_new) - present_value(asset, d, n)


def annuity_factor(d: float, life: float) -> float:
    """Capital-recovery factor d / (1 - (1 + d)^-life)."""
    if d <= 0 or life < 1:
        raise GridTariffError("annuity factor needs d > 0 and life >= 1", code="invalid-annuity")
    return d / (1.0 - (1.0 + d) ** (-life))


def _loadings(case: NetworkCase, kind: str, metric: str, opts):
    sol = solve_newton(case, opts)
    if not sol.converged:
        raise ConvergenceError("power flow did not converge")
    if kind == KIND_Q:
        metric = "q"
    return flow_magnitude(sol.flows, metric)


def nodal_lric(case: NetworkCase, node: int, delta: float, econ: EconomicParams | None = None,
               security_mode: str = WITH_SF, formulation: str = CHAPTER1,
               power_kind: str = KIND_P, metric: str = "mva",
               security_factors: dict[int, float] | None = None,
               opts: SolverOptions | None = None) -> LricCharges:
    """LRIC charge (currency per MW or MVar per year) for a ``delta`` load step at ``node``.

    Positive ``delta`` adds demand.  With ``security_mode == "with_sf"`` each
    branch capacity is divided by its base-case security factor; the factors
    are computed by a contingency sweep unless ``security_factors`` is given.
    ``power_kind == "Q"`` perturbs reactive demand and measures MVar loadings.
    """
    if delta == 0:
        raise ZeroInjectionError("injection must be non-zero")
    if security_mode not in (WITH_SF, WITHOUT_SF):
        raise ValueError(f"unknown security mode {security_mode!r}")
    if formulation not in (CHAPTER1, CHAPTER2):
        raise ValueError(f"unknown formulation {formulation!r}")
    if power_kind not in (KIND_P, KIND_Q):
        raise ValueError(f"unknown power kind {power_kind!r}")
    econ = econ or case.econ
    case.bus(node)

    base = _loadings(case, power_kind, metric, opts)
    if power_kind == KIND_P:
        perturbed = case.add_load(node, dp=delta)
    else:
        perturbed = case.add_load(node, dq=delta)
    new = _loadings(perturbed, power_kind, metric, opts)

    if security_mode == WITH_SF and security_factors is None:
        sweep_metric = "q" if power_kind == KIND_Q else metric
        security_factors = contingency_sweep(case, sweep_metric, opts=opts).factors()

    af = annuity_factor(econ.discount_rate, econ.asset_life)
    r, d = econ.growth_rate, econ.discount_rate
    contributions, excluded = [], []
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        if br.rating <= 0:
            log.warning("branch %d has zero rating; excluded from LRIC", k + 1)
            excluded.append(k + 1)
            continue
        sf = security_factors.get(k + 1, 1.0) if security_mode == WITH_SF else 1.0
        cap_eff = br.rating / sf
        n = reinforcement_horizon(cap_eff, float(base[k]), r)
        n_new = reinforcement_horizon(cap_eff, float(new[k]), r)
        dpv = delta_pv(br.asset_cost, d, n, n_new)
        contrib = dpv * af
        if formulation == CHAPTER2:
            contrib /= br.rating / case.base_mva
        overloaded = is_overloaded(cap_eff, float(base[k])) or is_overloaded(cap_eff, float(new[k]))
        contributions.append(BranchContribution(
            k + 1, br.rating, cap_eff, float(base[k]), float(new[k]),
            HorizonEntry(k + 1, n, n_new, security_mode == WITH_SF, overloaded), dpv, contrib))
    charge = math.fsum(c.contribution for c in contributions) / delta
    return LricCharges(node, delta, power_kind, security_mode, formulation, charge,
                       tuple(contributions), tuple(excluded))


@dataclass(frozen=True)
class SweepEntry:
    node: int
    delta: float
    power_kind: str
    security_mode: str
    formulation: str
    charge: float | None
    error: str = ""


def lric_sweep(case: NetworkCase, nodes, deltas, security_modes=(WITH_SF, WITHOUT_SF),
               power_kinds=(KIND_P,), formulation: str = CHAPTER1, metric: str = "mva",
               opts: SolverOptions | None = None) -> list[SweepEntry]:
    """Charges for every (node, delta, kind, mode) combination; per-entry errors are kept."""
    if isinstance(deltas, (int, float)):
        deltas = (deltas,)
    factors: dict[str, dict[int, float]] = {}
    out = []
    for kind in power_kinds:
        if WITH_SF in security_modes:
            sweep_metric = "q" if kind == KIND_Q else metric
            factors[kind] = contingency_sweep(case, sweep_metric, opts=opts).factors()
        for node in sorted(nodes):
            for dlt in deltas:
                for mode in security_modes:
                    try:
                        res = nodal_lric(case, node, dlt, security_mode=mode, formulation=formulation,
                                         power_kind=kind, metric=metric,
                                         security_factors=factors.get(kind), opts=opts)
                        out.append(SweepEntry(node, dlt, kind, mode, formulation, res.charge))
                    except GridTariffError as exc:
                        out.append(SweepEntry(node, dlt, kind, mode, formulation, None, exc.code))
    return out


SWEEP_CSV_COLUMNS = ("node", "delta", "kind", "mode", "formulation", "charge", "error")


def sweep_csv(entries: list[SweepEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_CSV_COLUMNS)
    for e in entries:
        w.writerow([e.node, repr(float(e.delta)), e.power_kind, e.security_mode, e.formulation,
                    "" if e.charge is None else repr(e.charge), e.error])
    return buf.getvalue()


def charges_to_dict(res: LricCharges) -> dict:
    return {
        "node": res.node,
        "delta": res.delta_injection,
        "power_kind": res.power_kind,
        "security_mode": res.security_mode,
        "formulation": res.formulation,
        "charge": res.charge,
        "excluded_branches": list(res.excluded),
        "branches": [{
            "branch": c.branch, "capacity": c.capacity, "effective_capacity": c.effective_capacity,
            "loading": c.loading, "loading_new": c.loading_new, "n": c.horizon.n,
            "n_new": c.horizon.n_new, "overloaded": c.horizon.overloaded,
            "delta_pv": c.delta_pv, "contribution": c.contribution,
        } for c in res.contributions],
    }
