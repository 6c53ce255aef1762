import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridtariff import rpo
from gridtariff.errors import GridTariffError
from gridtariff.netmodel import PQ, Bus, NetworkCase, SLACK, Generator, Branch, two_bus
from gridtariff.powerflow import solve_newton, stability_margin

from netgen import random_case


def test_f_loss_zero_current():
    case = two_bus()
    assert rpo.f_loss(case, solve_newton(case)) == 0.0


def test_f_loss_matches_solver_on_ieee14(case14, sol14):
    assert rpo.f_loss(case14, sol14) == pytest.approx(sol14.total_loss_p, abs=1e-6)


def test_f_loss_identity_on_100_random_networks():
    checked, seed = 0, 0
    while checked < 100:
        case = random_case(np.random.default_rng(seed))
        seed += 1
        sol = solve_newton(case)
        if not sol.converged:  # occasional overloaded draw; not what this test is about
            continue
        assert abs(rpo.f_loss(case, sol) - sol.total_loss_p) / case.base_mva < 1e-8
        checked += 1
    assert seed < 150


def test_f_invest():
    assert rpo.f_invest([0.0, 0.0], [5.0, 5.0]) == 0.0
    assert rpo.f_invest([19.0], [1.0]) == 19.0
    assert rpo.f_invest([10.0, -5.0], 2.0) == 30.0


def test_f_invest_case(case14):
    assert rpo.f_invest_case(case14) == 19.0
    off = case14.with_shunt(0, steps=0)
    assert rpo.f_invest_case(off) == 0.0


def _one_pq_bus_case(v_band=(0.95, 1.05)):
    buses = (Bus(1, SLACK, v_min=0.9, v_max=1.1), Bus(2, PQ, v_min=v_band[0], v_max=v_band[1]))
    return NetworkCase(100.0, buses, (Generator(1),), (Branch(1, 2, 0.0, 0.1, 0.0, 100.0),))


def test_f_vd_hand_value():
    case = _one_pq_bus_case()
    sol = solve_newton(case)
    sol = dataclasses.replace(sol, v_mag=np.array([1.0, 1.04]))
    assert rpo.f_vd(case, sol) == pytest.approx(0.4)


def test_f_vd_zero_iff_flat_profile():
    case = _one_pq_bus_case()
    sol = solve_newton(case)
    assert rpo.f_vd(case, sol) == pytest.approx(0.0, abs=1e-12)
    moved = dataclasses.replace(sol, v_mag=np.array([1.0, 1.0 + 1e-6]))
    assert rpo.f_vd(case, moved) > 0


def test_f_vd_rejects_zero_band():
    case = _one_pq_bus_case()
    bad = case.with_bus(2, v_min=1.0, v_max=1.0)
    with pytest.raises(GridTariffError):
        rpo.f_vd(bad, solve_newton(case))


def test_f_vd_drops_after_helpful_action(case14, sol14):
    before = rpo.f_vd(case14, sol14)
    k = next(i for i, g in enumerate(case14.generators) if g.bus == 6)
    moved = case14.with_generator(k, v_set=1.06)
    assert 0 <= rpo.f_vd(moved, solve_newton(moved)) < before


def test_f_margin(case14, sol14, caplog):
    assert rpo.f_margin(delta_min=1.0) == 1.0
    assert rpo.f_margin(delta_min=0.25) == 4.0
    with caplog.at_level(logging.WARNING):
        assert rpo.f_margin(delta_min=0.0) == math.inf
    assert "collapse" in caplog.text
    assert rpo.f_margin(case14, sol14) == pytest.approx(1 / stability_margin(case14, sol14))


B4 = ((0.0, 10.0), (0.0, 100.0), (0.0, 1.0), (1.0, 3.0))


def test_weighted_objective_examples():
    assert rpo.weighted_objective([0.0, 0.0, 0.0, 1.0], (0.3, 0.3, 0.2, 0.2), B4) == 0.0
    assert rpo.weighted_objective([10.0, 100.0, 1.0, 3.0], (1, 1, 1, 1), B4) == pytest.approx(4.0)
    assert rpo.weighted_objective([5.0, 50.0, 0.5, 2.0], (0.4, 0.1, 0.4, 0.1), B4) == pytest.approx(0.5)


def test_weighted_objective_clamps(caplog):
    with caplog.at_level(logging.WARNING):
        v = rpo.weighted_objective([20.0, 0.0, 0.0, 1.0], (1, 0, 0, 0), B4)
    assert v == 1.0 and "clamped" in caplog.text


def test_weights_validated():
    with pytest.raises(GridTariffError):
        rpo.weighted_objective([0, 0, 0, 0], (-1, 0, 0, 0), B4)
    with pytest.raises(GridTariffError):
        rpo.weighted_objective([0, 0, 0, 0], (1, 0, 0, 0), ((1, 1),) * 4)


@settings(max_examples=200)
@given(raw=st.lists(st.floats(-5, 200), min_size=4, max_size=4),
       weights=st.lists(st.floats(0, 10), min_size=4, max_size=4),
       which=st.integers(0, 3), bump=st.floats(0, 100))
def test_weighted_objective_monotone(raw, weights, which, bump):
    logging.disable(logging.WARNING)
    try:
        higher = list(raw)
        higher[which] += bump
        assert rpo.weighted_objective(higher, weights, B4) >= rpo.weighted_objective(raw, weights, B4) - 1e-12
    finally:
        logging.disable(logging.NOTSET)


def test_sample_objective_bounds(case14):
    b = rpo.sample_objective_bounds(case14, 10, np.random.default_rng(3))
    assert len(b) == 4 and all(hi > lo for lo, hi in b)
    assert b == rpo.sample_objective_bounds(case14, 10, np.random.default_rng(3))


def test_constraints_feasible_base(case14, sol14):
    rep = rpo.check_constraints(case14, sol14)
    assert rep.feasible and rep.max_mismatch < 1e-8


def test_constraints_voltage_violation():
    case = _one_pq_bus_case((0.9, 1.10))
    sol = dataclasses.replace(solve_newton(case), v_mag=np.array([1.0, 1.12]))
    rep = rpo.check_constraints(case, sol)
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert v.variable == "voltage[2]" and v.limit == 1.10 and v.slack == pytest.approx(0.02)


def test_constraints_tap_screened_before_solving(case14):
    c = rpo.controls_of(case14)
    bad = dataclasses.replace(c, tap_positions=(1.2,) + c.tap_positions[1:])
    rep = rpo.check_constraints(case14, None, bad)
    assert [v.variable for v in rep.violations] == ["tap[4-7]"]
    assert rep.max_mismatch is None


def test_controls_round_trip(case14):
    c = rpo.controls_of(case14)
    assert rpo.controls_of(rpo.apply_controls(case14, c)) == c
    assert rpo.ControlVector.from_dict(c.to_dict()) == c
    with pytest.raises(GridTariffError):
        rpo.apply_controls(case14, dataclasses.replace(c, shunt_steps=()))


def test_quote_curves():
    assert rpo.QuoteCurve(((0.0, 10.0, 1.0), (10.0, 30.0, 3.0))).cost(20.0) == pytest.approx(40.0)
    flat = rpo.QuoteCurve(((0.0, 100.0, 2.0),))
    assert rpo.market_objective(10.0, 50.0, {0: flat}, {0: 20.0}) == pytest.approx(540.0)
    assert rpo.market_objective(0.0, 50.0, {0: flat}, {0: 0.0}) == 0.0
    with pytest.raises(GridTariffError) as exc:
        flat.cost(150.0)
    assert exc.value.code == "extrapolation"


def test_market_objective_on_solution(case14, sol14):
    curve = rpo.QuoteCurve(((-100.0, 0.0, 1.0), (0.0, 100.0, 1.0)))
    val = rpo.market_objective_solution(case14, sol14, 10.0, {1: curve})
    assert val == pytest.approx(10 * sol14.total_loss_p + sol14.q_gen[1])


def test_scenario_index():
    one = [rpo.Scenario(1.0, 5.0, 12.0, 0.5)]
    assert rpo.scenario_index(one, 0.3, 0.7) == pytest.approx(0.3 * 12 + 0.7 / 0.5)
    two = [rpo.Scenario(0.5, 0, 10.0, 0.5), rpo.Scenario(0.5, 0, 20.0, 0.25)]
    assert rpo.scenario_index(two, 1.0, 1.0) == pytest.approx(15 + 1 / 0.375)
    assert rpo.scenario_index(two, 1.0, 0.0) == pytest.approx(15.0)
    with pytest.raises(GridTariffError):
        rpo.scenario_index([rpo.Scenario(0.6, 0, 1, 1)], 1, 1)


@settings(max_examples=50)
@given(losses=st.lists(st.floats(0, 1e3), min_size=3, max_size=3), delta=st.floats(0.01, 5))
def test_scenario_index_ignores_losses_without_loss_weight(losses, delta):
    sc = [rpo.Scenario(p, 0.0, l, delta) for p, l in zip((0.2, 0.3, 0.5), losses)]
    assert rpo.scenario_index(sc, 0.0, 2.0) == pytest.approx(2.0 / delta)


def test_wind_scenarios(case14):
    sc = rpo.evaluate_wind_scenarios(case14, 14, [0.0, 5.0, 10.0], [0.2, 0.5, 0.3])
    assert [s.wind_p for s in sc] == [0.0, 5.0, 10.0]
    assert sc[0].p_loss == pytest.approx(solve_newton(case14).total_loss_p)
    assert math.isfinite(rpo.scenario_index(sc, 0.5, 0.5))
