"""Network data model, the plain-text case format, and the embedded IEEE 14-bus case.

Powers are carried in MW/MVar on the model objects; conversion to per-unit
happens at the solver boundary (``p_mw / base_mva``).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable

from .errors import CaseError, CaseSyntaxError

SLACK, PV, PQ = "slack", "PV", "PQ"
BUS_KINDS = {"slack": SLACK, "pv": PV, "pq": PQ}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_mag: float = 1.0
    v_ang: float = 0.0
    v_min: float = 0.94
    v_max: float = 1.10
    v_spec: float = 1.0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_gen: float = 0.0
    q_gen: float = 0.0
    q_min: float = -9999.0
    q_max: float = 9999.0
    v_set: float = 1.0
    p_min: float = 0.0
    p_max: float = 9999.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    rating: float = 100.0
    tap: float = 1.0
    tap_min: float = 1.0
    tap_max: float = 1.0
    tap_step: float = 0.0
    status: bool = True
    asset_cost: float = 8e8

    @property
    def adjustable(self) -> bool:
        return self.tap_step > 0.0


@dataclass(frozen=True)
class ShuntBank:
    bus: int
    q_step: float
    steps: int = 0
    steps_max: int = 1
    unit_cost: float = 1.0

    @property
    def q_mvar(self) -> float:
        return self.q_step * self.steps


@dataclass(frozen=True)
class EconomicParams:
    """Reinforcement economics shared by every branch.

    ``asset_cost`` is the default per-branch reinforcement cost; each branch
    carries its own copy which is what the pricing code reads.
    """

    asset_cost: float = 8e8
    growth_rate: float = 0.01
    discount_rate: float = 0.03
    asset_life: float = 40.0

    @property
    def annuity_factor(self) -> float:
        d, life = self.discount_rate, self.asset_life
        return d / (1.0 - (1.0 + d) ** (-life))


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...] = ()
    branches: tuple[Branch, ...] = ()
    shunt_banks: tuple[ShuntBank, ...] = ()
    econ: EconomicParams = field(default_factory=EconomicParams)
    name: str = ""

    # -- lookups -----------------------------------------------------------
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseError(f"no bus {bus_id}", code="missing-bus")

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.kind == SLACK)

    def adjustable_transformers(self) -> list[int]:
        """Indices of branches whose tap ratio is a control variable."""
        return [k for k, br in enumerate(self.branches) if br.adjustable]

    def transformer_count(self) -> int:
        return sum(1 for br in self.branches if br.tap != 1.0)

    # -- functional updates --------------------------------------------------
    def with_bus(self, bus_id: int, **changes) -> "NetworkCase":
        buses = tuple(replace(b, **changes) if b.id == bus_id else b for b in self.buses)
        return replace(self, buses=buses)

    def with_branch(self, k: int, **changes) -> "NetworkCase":
        branches = list(self.branches)
        branches[k] = replace(branches[k], **changes)
        return replace(self, branches=tuple(branches))

    def with_generator(self, k: int, **changes) -> "NetworkCase":
        gens = list(self.generators)
        gens[k] = replace(gens[k], **changes)
        return replace(self, generators=tuple(gens))

    def with_shunt(self, k: int, **changes) -> "NetworkCase":
        banks = list(self.shunt_banks)
        banks[k] = replace(banks[k], **changes)
        return replace(self, shunt_banks=tuple(banks))

    def add_load(self, bus_id: int, dp: float = 0.0, dq: float = 0.0) -> "NetworkCase":
        b = self.bus(bus_id)
        return self.with_bus(bus_id, p_load=b.p_load + dp, q_load=b.q_load + dq)

    def without_branch(self, k: int) -> "NetworkCase":
        return self.with_branch(k, status=False)

    # -- validation ----------------------------------------------------------
    def is_connected(self) -> bool:
        return is_connected(self)

    def validate(self) -> "NetworkCase":
        validate(self)
        return self


def is_connected(case: NetworkCase) -> bool:
    if not case.buses:
        return False
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.status:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    start = case.buses[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(case.buses)


def validate(case: NetworkCase) -> None:
    """Raise :class:`CaseError` if any model invariant is violated."""
    if case.base_mva <= 0:
        raise CaseError("base_mva must be positive", code="invalid-base")
    ids = set()
    for b in case.buses:
        if b.id <= 0:
            raise CaseError(f"bus id {b.id} must be positive", code="invalid-bus")
        if b.id in ids:
            raise CaseError(f"duplicate bus id {b.id}", code="duplicate-bus")
        ids.add(b.id)
        if b.kind not in (SLACK, PV, PQ):
            raise CaseError(f"bus {b.id}: unknown kind {b.kind!r}", code="invalid-bus")
        if not b.v_min < b.v_max:
            raise CaseError(f"bus {b.id}: v_min must be below v_max", code="invalid-limits")
        if not b.v_min <= b.v_spec <= b.v_max:
            raise CaseError(f"bus {b.id}: v_spec outside limits", code="invalid-limits")
    n_slack = sum(1 for b in case.buses if b.kind == SLACK)
    if n_slack == 0:
        raise CaseError("no slack bus", code="no-slack")
    if n_slack > 1:
        raise CaseError("multiple slack buses", code="multiple-slack")
    by_id = {b.id: b for b in case.buses}
    for g in case.generators:
        if g.bus not in by_id:
            raise CaseError(f"generator at missing bus {g.bus}", code="missing-bus")
        bus = by_id[g.bus]
        if not bus.v_min <= g.v_set <= bus.v_max:
            raise CaseError(f"generator at bus {g.bus}: v_set outside bus limits",
                            code="invalid-limits")
        if g.q_min > g.q_max:
            raise CaseError(f"generator at bus {g.bus}: q_min > q_max", code="invalid-limits")
    for k, br in enumerate(case.branches, start=1):
        for end in (br.from_bus, br.to_bus):
            if end not in by_id:
                raise CaseError(f"branch {k} references missing bus {end}", code="missing-bus")
        if br.r == 0.0 and br.x == 0.0:
            raise CaseError(f"branch {k} has zero impedance", code="zero-impedance")
        if br.rating < 0:
            raise CaseError(f"branch {k} has negative rating", code="invalid-limits")
        if br.adjustable and not br.tap_min <= br.tap <= br.tap_max:
            raise CaseError(f"branch {k}: tap outside [tap_min, tap_max]", code="invalid-limits")
    for s in case.shunt_banks:
        if s.bus not in by_id:
            raise CaseError(f"shunt at missing bus {s.bus}", code="missing-bus")
        if not 0 <= s.steps <= s.steps_max:
            raise CaseError(f"shunt at bus {s.bus}: steps outside [0, steps_max]",
                            code="invalid-limits")
    if not is_connected(case):
        raise CaseError("network is not connected", code="disconnected")


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

BUS_COLUMNS = ("id", "kind", "p_load", "q_load", "g_shunt", "b_shunt",
               "v_mag", "v_ang", "v_min", "v_max", "v_spec")
GEN_COLUMNS = ("bus", "p_gen", "q_gen", "q_min", "q_max", "v_set", "p_min", "p_max")
BRANCH_COLUMNS = ("from", "to", "r", "x", "b_charging", "rating", "tap",
                  "tap_min", "tap_max", "tap_step", "status", "asset_cost")
SHUNT_COLUMNS = ("bus", "q_step", "steps", "steps_max", "unit_cost")
ECON_KEYS = ("asset_cost", "growth_rate", "discount_rate", "asset_life")

SECTIONS = {
    "buses": BUS_COLUMNS,
    "generators": GEN_COLUMNS,
    "branches": BRANCH_COLUMNS,
    "shunts": SHUNT_COLUMNS,
}


def _num(tok: str, lineno: int, col: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseSyntaxError(f"expected a number, got {tok!r}", lineno, col) from None


def _int(tok: str, lineno: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseSyntaxError(f"expected an integer, got {tok!r}", lineno, col) from None


def _tokens(line: str) -> list[tuple[str, int]]:
    out = []
    i = 0
    while i < len(line):
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < len(line) and not line[j].isspace():
            j += 1
        out.append((line[i:j], i + 1))
        i = j
    return out


def parse_case(text: str) -> NetworkCase:
    """Parse the sectioned case format (see ``serialize_case``) and validate it."""
    base_mva = None
    name = ""
    section = None
    buses, gens, branches, shunts = [], [], [], []
    econ = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise CaseSyntaxError("unterminated section header", lineno, line.index("[") + 1)
            section = stripped[1:-1].strip().lower()
            if section not in SECTIONS and section != "economics":
                raise CaseSyntaxError(f"unknown section [{section}]", lineno, line.index("[") + 1)
            continue
        if section is None or section == "economics":
            if "=" not in line:
                raise CaseSyntaxError("expected 'key = value'", lineno, 1)
            key, value = (s.strip() for s in line.split("=", 1))
            col = line.index("=") + 2
            if section is None:
                if key == "base_mva":
                    base_mva = _num(value, lineno, col)
                elif key == "name":
                    name = value
                else:
                    raise CaseSyntaxError(f"unknown header key {key!r}", lineno, 1)
            else:
                if key not in ECON_KEYS:
                    raise CaseSyntaxError(f"unknown economics key {key!r}", lineno, 1)
                econ[key] = _num(value, lineno, col)
            continue

        toks = _tokens(line)
        columns = SECTIONS[section]
        if len(toks) != len(columns):
            raise CaseSyntaxError(
                f"[{section}] row needs {len(columns)} columns, found {len(toks)}",
                lineno, toks[-1][1] if toks else 1)
        if section == "buses":
            kind_tok, kind_col = toks[1]
            kind = BUS_KINDS.get(kind_tok.lower())
            if kind is None:
                raise CaseSyntaxError(f"unknown bus kind {kind_tok!r}", lineno, kind_col)
            vals = [_num(t, lineno, c) for t, c in toks[2:]]
            buses.append(Bus(_int(toks[0][0], lineno, toks[0][1]), kind, *vals))
        elif section == "generators":
            gens.append(Generator(_int(toks[0][0], lineno, toks[0][1]),
                                  *[_num(t, lineno, c) for t, c in toks[1:]]))
        elif section == "branches":
            f = _int(toks[0][0], lineno, toks[0][1])
            t = _int(toks[1][0], lineno, toks[1][1])
            vals = [_num(tk, lineno, c) for tk, c in toks[2:10]]
            status = _int(toks[10][0], lineno, toks[10][1])
            if status not in (0, 1):
                raise CaseSyntaxError("status must be 0 or 1", lineno, toks[10][1])
            cost = _num(toks[11][0], lineno, toks[11][1])
            branches.append(Branch(f, t, *vals, status=bool(status), asset_cost=cost))
        else:
            shunts.append(ShuntBank(
                _int(toks[0][0], lineno, toks[0][1]),
                _num(toks[1][0], lineno, toks[1][1]),
                _int(toks[2][0], lineno, toks[2][1]),
                _int(toks[3][0], lineno, toks[3][1]),
                _num(toks[4][0], lineno, toks[4][1]),
            ))
    if base_mva is None:
        raise CaseSyntaxError("missing 'base_mva = <number>' header", 1, 1)
    case = NetworkCase(base_mva, tuple(buses), tuple(gens), tuple(branches), tuple(shunts),
                       EconomicParams(**econ), name)
    return case.validate()


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, str)):
        return str(x)
    return repr(float(x))


def _table(header: Iterable[str], rows: Iterable[Iterable]) -> list[str]:
    lines = ["# " + " ".join(header)]
    lines += [" ".join(_fmt(v) for v in row) for row in rows]
    return lines


def serialize_case(case: NetworkCase) -> str:
    """Render a case in the text format; ``parse_case`` inverts this exactly."""
    out = ["# gridtariff case file; powers in MW/MVar, impedances in per-unit, angles in degrees"]
    if case.name:
        out.append(f"name = {case.name}")
    out.append(f"base_mva = {_fmt(case.base_mva)}")
    out.append("")
    out.append("[buses]")
    out += _table(BUS_COLUMNS, (
        (b.id, b.kind, b.p_load, b.q_load, b.g_shunt, b.b_shunt, b.v_mag, b.v_ang,
         b.v_min, b.v_max, b.v_spec) for b in case.buses))
    out.append("")
    out.append("[generators]")
    out += _table(GEN_COLUMNS, (
        (g.bus, g.p_gen, g.q_gen, g.q_min, g.q_max, g.v_set, g.p_min, g.p_max)
        for g in case.generators))
    out.append("")
    out.append("[branches]")
    out += _table(BRANCH_COLUMNS, (
        (br.from_bus, br.to_bus, br.r, br.x, br.b_charging, br.rating, br.tap, br.tap_min,
         br.tap_max, br.tap_step, br.status, br.asset_cost) for br in case.branches))
    out.append("")
    out.append("[shunts]")
    out += _table(SHUNT_COLUMNS, (
        (s.bus, s.q_step, s.steps, s.steps_max, s.unit_cost) for s in case.shunt_banks))
    out.append("")
    out.append("[economics]")
    for key in ECON_KEYS:
        out.append(f"{key} = {_fmt(getattr(case.econ, key))}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# IEEE 14-bus reference case
# ---------------------------------------------------------------------------

# id kind Pd Qd Vm Va (published solved state used as initial values)
_IEEE14_BUSES = (
    (1, SLACK, 0.0, 0.0, 1.06, 0.0),
    (2, PV, 21.7, 12.7, 1.045, -4.98),
    (3, PV, 94.2, 19.0, 1.01, -12.72),
    (4, PQ, 47.8, -3.9, 1.019, -10.33),
    (5, PQ, 7.6, 1.6, 1.02, -8.78),
    (6, PV, 11.2, 7.5, 1.07, -14.22),
    (7, PQ, 0.0, 0.0, 1.062, -13.37),
    (8, PV, 0.0, 0.0, 1.09, -13.36),
    (9, PQ, 29.5, 16.6, 1.056, -14.94),
    (10, PQ, 9.0, 5.8, 1.051, -15.1),
    (11, PQ, 3.5, 1.8, 1.057, -14.79),
    (12, PQ, 6.1, 1.6, 1.055, -15.07),
    (13, PQ, 13.5, 5.8, 1.05, -15.16),
    (14, PQ, 14.9, 5.0, 1.036, -16.04),
)

# bus Pg Qg Qmin Qmax Vg Pmin Pmax
_IEEE14_GENS = (
    (1, 232.4, -16.9, 0.0, 10.0, 1.06, 0.0, 332.4),
    (2, 40.0, 42.4, -40.0, 50.0, 1.045, 0.0, 140.0),
    (3, 0.0, 23.4, 0.0, 40.0, 1.01, 0.0, 100.0),
    (6, 0.0, 12.2, -6.0, 24.0, 1.07, 0.0, 100.0),
    (8, 0.0, 17.4, -6.0, 24.0, 1.09, 0.0, 100.0),
)

# from to r x b tap rating(MVA)
# Ratings: 4-7, 4-9 and 5-6 from the published MALL table; the rest are
# 1.5x the base-case N-1 maximum flow, rounded up to 5/10 MVA.
_IEEE14_BRANCHES = (
    (1, 2, 0.01938, 0.05917, 0.0528, 1.0, 370.0),
    (1, 5, 0.05403, 0.22304, 0.0492, 1.0, 400.0),
    (2, 3, 0.04699, 0.19797, 0.0438, 1.0, 150.0),
    (2, 4, 0.05811, 0.17632, 0.034, 1.0, 150.0),
    (2, 5, 0.05695, 0.17388, 0.0346, 1.0, 120.0),
    (3, 4, 0.06701, 0.17103, 0.0128, 1.0, 160.0),
    (4, 5, 0.01335, 0.04211, 0.0, 1.0, 230.0),
    (4, 7, 0.0, 0.20912, 0.0, 0.978, 89.67),
    (4, 9, 0.0, 0.55618, 0.0, 0.969, 60.06),
    (5, 6, 0.0, 0.25202, 0.0, 0.932, 100.2),
    (6, 11, 0.09498, 0.1989, 0.0, 1.0, 40.0),
    (6, 12, 0.12291, 0.25581, 0.0, 1.0, 35.0),
    (6, 13, 0.06615, 0.13027, 0.0, 1.0, 45.0),
    (7, 8, 0.0, 0.17615, 0.0, 1.0, 35.0),
    (7, 9, 0.0, 0.11001, 0.0, 1.0, 90.0),
    (9, 10, 0.03181, 0.0845, 0.0, 1.0, 60.0),
    (9, 14, 0.12711, 0.27038, 0.0, 1.0, 45.0),
    (10, 11, 0.08205, 0.19207, 0.0, 1.0, 40.0),
    (12, 13, 0.22092, 0.19988, 0.0, 1.0, 25.0),
    (13, 14, 0.17093, 0.34802, 0.0, 1.0, 25.0),
)

IEEE14_TAP_MIN, IEEE14_TAP_MAX, IEEE14_TAP_STEP = 0.9, 1.1, 0.01


def ieee14() -> NetworkCase:
    """The standard IEEE 14-bus case on a 100 MVA base.

    Transformer taps on 4-7, 4-9 and 5-6 are adjustable; the 19 MVar shunt at
    bus 9 is a switchable bank (one of five steps engaged).
    """
    econ = EconomicParams()
    buses = tuple(
        Bus(i, kind, pd, qd, 0.0, 0.0, vm, va, 0.94, 1.10, 1.0)
        for i, kind, pd, qd, vm, va in _IEEE14_BUSES)
    gens = tuple(Generator(*row) for row in _IEEE14_GENS)
    branches = []
    for f, t, r, x, b, tap, rating in _IEEE14_BRANCHES:
        if tap != 1.0:
            branches.append(Branch(f, t, r, x, b, rating, tap, IEEE14_TAP_MIN, IEEE14_TAP_MAX,
                                   IEEE14_TAP_STEP, True, econ.asset_cost))
        else:
            branches.append(Branch(f, t, r, x, b, rating, asset_cost=econ.asset_cost))
    banks = (ShuntBank(bus=9, q_step=19.0, steps=1, steps_max=5, unit_cost=1.0),)
    return NetworkCase(100.0, buses, gens, tuple(branches), banks, econ, "ieee14").validate()


def two_bus(load_p: float = 0.0, load_q: float = 0.0, r: float = 0.0, x: float = 0.1,
            b: float = 0.0, rating: float = 100.0) -> NetworkCase:
    """Slack at bus 1 feeding a PQ load at bus 2 over one line; handy for tests."""
    buses = (Bus(1, SLACK, v_mag=1.0), Bus(2, PQ, p_load=load_p, q_load=load_q))
    gens = (Generator(1, v_set=1.0),)
    branches = (Branch(1, 2, r, x, b, rating),)
    return NetworkCase(100.0, buses, gens, branches, name="two-bus").validate()


def load_case(source: str) -> NetworkCase:
    """Resolve a CLI case argument: the keyword ``ieee14`` or a file path."""
    if source == "ieee14":
        return ieee14()
    with open(source, encoding="utf-8") as fh:
        return parse_case(fh.read())

