"""Reactive-power optimization objectives, normalization and constraint checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, GridTariffError
from .netmodel import PQ, NetworkCase
from .powerflow import PowerFlowSolution, solve_newton, stability_margin

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlVector:
    gen_voltages: tuple[float, ...]
    shunt_steps: tuple[int, ...]
    tap_positions: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"gen_voltages": list(self.gen_voltages), "shunt_steps": list(self.shunt_steps),
                "tap_positions": list(self.tap_positions)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControlVector":
        return cls(tuple(float(v) for v in d["gen_voltages"]),
                   tuple(int(s) for s in d["shunt_steps"]),
                   tuple(float(t) for t in d["tap_positions"]))


def controls_of(case: NetworkCase) -> ControlVector:
    return ControlVector(
        tuple(g.v_set for g in case.generators),
        tuple(s.steps for s in case.shunt_banks),
        tuple(case.branches[k].tap for k in case.adjustable_transformers()),
    )


def apply_controls(case: NetworkCase, controls: ControlVector) -> NetworkCase:
    """Case with the control settings written in (no bound checking)."""
    if (len(controls.gen_voltages) != len(case.generators)
            or len(controls.shunt_steps) != len(case.shunt_banks)
            or len(controls.tap_positions) != len(case.adjustable_transformers())):
        raise GridTariffError("control vector does not match the case layout", code="invalid-controls")
    for k, v in enumerate(controls.gen_voltages):
        case = case.with_generator(k, v_set=v)
    for k, s in enumerate(controls.shunt_steps):
        case = case.with_shunt(k, steps=s)
    for k, t in zip(case.adjustable_transformers(), controls.tap_positions):
        case = case.with_branch(k, tap=t)
    return case


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def f_loss(case: NetworkCase, solution: PowerFlowSolution) -> float:
    """Active loss (MW) from branch series conductances and terminal voltages.

    Off-nominal taps scale the from-end voltage by 1/tap; for untapped
    branches this is the textbook G[Ui² + Uj² - 2UiUj cos θij] sum.
    """
    idx = case.bus_index()
    vm, va = solution.v_mag, solution.v_ang_rad
    total = 0.0
    for br in case.branches:
        if not br.status:
            continue
        g = br.r / (br.r * br.r + br.x * br.x)
        if g == 0.0:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        ui = vm[i] / br.tap
        uj = vm[j]
        total += g * (ui * ui + uj * uj - 2.0 * ui * uj * math.cos(va[i] - va[j]))
    return total * case.base_mva


def compensation_mvar(case: NetworkCase, controls: ControlVector | None = None) -> list[float]:
    steps = controls.shunt_steps if controls is not None else [s.steps for s in case.shunt_banks]
    return [bank.q_step * st for bank, st in zip(case.shunt_banks, steps)]


def f_invest(q_mvar: Sequence[float], unit_costs) -> float:
    """Compensation investment Σ C_i |Q_i|; ``unit_costs`` may be a scalar."""
    if np.isscalar(unit_costs):
        unit_costs = [unit_costs] * len(q_mvar)
    return float(math.fsum(c * abs(q) for c, q in zip(unit_costs, q_mvar)))


def f_invest_case(case: NetworkCase, controls: ControlVector | None = None) -> float:
    return f_invest(compensation_mvar(case, controls), [s.unit_cost for s in case.shunt_banks])


def f_vd(case: NetworkCase, solution: PowerFlowSolution) -> float:
    """Band-normalized voltage deviation summed over PQ buses."""
    total = 0.0
    n_pq = 0
    for b, v in zip(case.buses, solution.v_mag):
        if b.kind != PQ:
            continue
        n_pq += 1
        if b.v_max == b.v_min:
            raise GridTariffError(f"bus {b.id} has a zero-width voltage band", code="invalid-limits")
        total += abs((b.v_spec - v) / (b.v_max - b.v_min))
    if n_pq == 0:
        raise GridTariffError("no PQ buses", code="no-pq-bus")
    return float(total)


def f_margin(case: NetworkCase | None = None, solution: PowerFlowSolution | None = None,
             delta_min: float | None = None) -> float:
    """Reciprocal of the static stability margin; ``inf`` (with a warning) at collapse."""
    if delta_min is None:
        delta_min = stability_margin(case, solution)
    if delta_min == 0:
        log.warning("zero minimum singular value: voltage collapse point")
        return math.inf
    return 1.0 / delta_min


@dataclass(frozen=True)
class ObjectiveWeights:
    lambdas: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    bounds: tuple[tuple[float, float], ...] = ((0.0, 1.0),) * 4

    def __post_init__(self):
        if any(lam < 0 for lam in self.lambdas):
            raise GridTariffError("weights must be non-negative", code="invalid-weights")
        if len(self.bounds) != 4 or any(hi <= lo for lo, hi in self.bounds):
            raise GridTariffError("each objective needs max > min", code="invalid-bounds")


OBJECTIVE_NAMES = ("p_loss", "p_invest", "v_dev", "margin_inv")


def normalize(raw: Sequence[float], bounds) -> list[float]:
    out = []
    for name, v, (lo, hi) in zip(OBJECTIVE_NAMES, raw, bounds):
        z = (v - lo) / (hi - lo)
        if z < 0.0 or z > 1.0:
            log.warning("objective %s=%g outside [%g, %g]; clamped", name, v, lo, hi)
            z = min(1.0, max(0.0, z))
        out.append(z)
    return out


def weighted_objective(raw: Sequence[float], weights: Sequence[float], bounds) -> float:
    """Σ λ_i · (v_i - min_i) / (max_i - min_i) with out-of-range values clamped."""
    w = ObjectiveWeights(tuple(weights), tuple(tuple(b) for b in bounds))
    return float(math.fsum(lam * z for lam, z in zip(w.lambdas, normalize(raw, w.bounds))))


def raw_objectives(case: NetworkCase, solution: PowerFlowSolution) -> tuple[float, float, float, float]:
    return (f_loss(case, solution), f_invest_case(case), f_vd(case, solution),
            f_margin(case, solution))


def sample_objective_bounds(case: NetworkCase, n_samples: int, rng: np.random.Generator):
    """Min/max of each raw objective over random admissible control settings."""
    samples = []
    trafos = case.adjustable_transformers()
    for _ in range(n_samples):
        gv = tuple(float(rng.uniform(case.bus(g.bus).v_min, case.bus(g.bus).v_max))
                   for g in case.generators)
        steps = tuple(int(rng.integers(0, s.steps_max + 1)) for s in case.shunt_banks)
        taps = []
        for k in trafos:
            br = case.branches[k]
            n_steps = int(round((br.tap_max - br.tap_min) / br.tap_step))
            taps.append(br.tap_min + br.tap_step * int(rng.integers(0, n_steps + 1)))
        trial = apply_controls(case, ControlVector(gv, steps, tuple(taps)))
        sol = solve_newton(trial)
        if sol.converged:
            samples.append(raw_objectives(trial, sol))
    if len(samples) < 2:
        raise ConvergenceError("too few converged samples to estimate objective bounds")
    arr = np.array(samples)
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1e-12)
    return tuple((float(a), float(b)) for a, b in zip(lo, hi))


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    variable: str
    value: float
    limit: float
    slack: float  # amount by which the limit is exceeded (positive)


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[Violation, ...] = ()
    max_mismatch: float | None = None

    @property
    def feasible(self) -> bool:
        return not self.violations


def _bound(out, name, value, lo, hi, tol=1e-9):
    if value > hi + tol:
        out.append(Violation(name, value, hi, value - hi))
    elif value < lo - tol:
        out.append(Violation(name, value, lo, lo - value))


def check_constraints(case: NetworkCase, solution: PowerFlowSolution | None = None,
                      controls: ControlVector | None = None,
                      angle_limit_deg: float | None = None) -> ConstraintReport:
    """Control-variable bounds, bus-voltage bounds and (optionally) branch angle bounds.

    ``solution`` may be omitted to screen a candidate control vector before solving.
    """
    controls = controls or controls_of(case)
    out: list[Violation] = []
    for g, v in zip(case.generators, controls.gen_voltages):
        bus = case.bus(g.bus)
        _bound(out, f"gen_voltage[{g.bus}]", v, bus.v_min, bus.v_max)
    for s, st in zip(case.shunt_banks, controls.shunt_steps):
        _bound(out, f"shunt_mvar[{s.bus}]", s.q_step * st, 0.0, s.q_step * s.steps_max)
    for k, t in zip(case.adjustable_transformers(), controls.tap_positions):
        br = case.branches[k]
        _bound(out, f"tap[{br.from_bus}-{br.to_bus}]", t, br.tap_min, br.tap_max)
    mismatch = None
    if solution is not None:
        for b, v in zip(case.buses, solution.v_mag):
            _bound(out, f"voltage[{b.id}]", float(v), b.v_min, b.v_max)
        if angle_limit_deg is not None:
            idx = case.bus_index()
            for br in case.branches:
                if br.status:
                    d = float(solution.v_ang[idx[br.from_bus]] - solution.v_ang[idx[br.to_bus]])
                    _bound(out, f"angle[{br.from_bus}-{br.to_bus}]", d,
                           -angle_limit_deg, angle_limit_deg)
        mismatch = solution.max_mismatch
    return ConstraintReport(tuple(out), mismatch)


# ---------------------------------------------------------------------------
# Market objective and wind scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuoteCurve:
    """Piecewise-constant marginal price for reactive output: segments (q_lo, q_hi, price)."""

    segments: tuple[tuple[float, float, float], ...]

    def cost(self, q: float) -> float:
        """∫_0^q price; raises if q leaves the quoted range."""
        segs = sorted(self.segments)
        lo_all, hi_all = segs[0][0], segs[-1][1]
        if not (lo_all - 1e-12 <= min(0.0, q) and max(0.0, q) <= hi_all + 1e-12):
            raise GridTariffError(f"Q={q} outside quoted range [{lo_all}, {hi_all}]",
                                  code="extrapolation")
        a, b = (0.0, q) if q >= 0 else (q, 0.0)
        total = 0.0
        for s_lo, s_hi, price in segs:
            overlap = min(b, s_hi) - max(a, s_lo)
            if overlap > 0:
                total += overlap * price
        return total if q >= 0 else -total


def market_objective(p_loss: float, lambda_loss: float, curves: Mapping[int, QuoteCurve],
                     q_outputs: Mapping[int, float]) -> float:
    """λ_loss·p_loss plus quoted reactive-power cost of each listed generator."""
    return lambda_loss * p_loss + math.fsum(curves[k].cost(q_outputs[k]) for k in curves)


def market_objective_solution(case: NetworkCase, solution: PowerFlowSolution, lambda_loss: float,
                              curves: Mapping[int, QuoteCurve]) -> float:
    q = {k: float(solution.q_gen[k]) for k in curves}
    return market_objective(solution.total_loss_p, lambda_loss, curves, q)


@dataclass(frozen=True)
class Scenario:
    probability: float
    wind_p: float
    p_loss: float
    delta: float


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]
    w1: float = 0.5
    w2: float = 0.5

    def __post_init__(self):
        probs = [s.probability for s in self.scenarios]
        if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
            raise GridTariffError("scenario probabilities must be >= 0 and sum to 1",
                                  code="invalid-probabilities")


def scenario_index(scenarios: Sequence[Scenario], w1: float, w2: float) -> float:
    """ω1·E[p_loss] + ω2 / E[δ] over the scenario distribution."""
    ScenarioSet(tuple(scenarios), w1, w2)
    expected_loss = math.fsum(s.probability * s.p_loss for s in scenarios)
    expected_margin = math.fsum(s.probability * s.delta for s in scenarios)
    if expected_margin == 0:
        raise GridTariffError("expected stability margin is zero", code="zero-margin")
    return w1 * expected_loss + w2 / expected_margin


def evaluate_wind_scenarios(case: NetworkCase, wind_bus: int, wind_outputs: Sequence[float],
                            probabilities: Sequence[float]) -> list[Scenario]:
    """Solve the case with each wind output (MW, as negative load) and record loss and margin."""
    out = []
    for p_w, prob in zip(wind_outputs, probabilities):
        trial = case.add_load(wind_bus, dp=-p_w)
        sol = solve_newton(trial)
        if not sol.converged:
            raise ConvergenceError(f"wind scenario {p_w} MW did not converge")
        out.append(Scenario(prob, p_w, sol.total_loss_p, stability_margin(trial, sol)))
    return out


@dataclass
class ObjectiveReport:
    raw: dict = field(default_factory=dict)
    normalized: float = 0.0
    constraints: ConstraintReport = field(default_factory=ConstraintReport)
