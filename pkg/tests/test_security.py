import time

import pytest

from gridtariff.errors import GridTariffError
from gridtariff.netmodel import two_bus
from gridtariff.security import (
    SWEEP_CSV_COLUMNS, base_case_flows, contingency_sweep, mall, mall_table,
    security_factor_with_injection, sweep_csv)


@pytest.fixture(scope="module")
def report14(case14):
    return contingency_sweep(case14)


def test_mall_table_a1_rows():
    assert mall(89.67, 1.32) == pytest.approx(67.93, abs=0.005)
    assert mall(60.06, 1.95) == pytest.approx(30.80, abs=0.005)
    assert mall(100.20, 1.36) == pytest.approx(73.68, abs=0.005)
    assert mall(42.0, 1.0) == 42.0


@pytest.mark.parametrize("sf", [0.0, -1.0])
def test_mall_rejects_nonpositive_sf(sf):
    with pytest.raises(GridTariffError) as exc:
        mall(100.0, sf)
    assert exc.value.code == "invalid-sf"


def test_base_case_flows(case14):
    flows = base_case_flows(case14)
    assert len(flows) == 20 and all(v > 0 for v in flows.values())
    assert base_case_flows(two_bus()) == {1: pytest.approx(0.0, abs=1e-12)}
    off = case14.with_branch(9, status=False)
    assert 10 not in base_case_flows(off)


def test_security_factors_at_least_one_where_evaluated(report14):
    for b in report14.branches:
        assert b.security_factor >= 1.0 - 1e-12 or b.max_contingency_flow < b.base_flow


def test_branch6_critical_outage_is_line_2_3(report14, case14):
    row = report14.by_branch()[6]
    assert (row.from_bus, row.to_bus) == (3, 4)
    crit = case14.branches[row.critical_outage - 1]
    assert (crit.from_bus, crit.to_bus) == (2, 3)
    assert row.security_factor == pytest.approx(4.4322, rel=0.015)


def test_table_factors_within_rounding(report14):
    f = report14.factors()
    assert f[1] == pytest.approx(1.5361, rel=0.015)
    assert f[19] == pytest.approx(7.8346, rel=0.03)


def test_islanding_outage_recorded(report14, case14):
    k = next(i + 1 for i, b in enumerate(case14.branches) if (b.from_bus, b.to_bus) == (7, 8))
    assert (k, "islanding") in report14.skipped_outages


def test_two_bus_every_outage_islands():
    rep = contingency_sweep(two_bus(50.0, 0.0))
    assert rep.skipped_outages == ((1, "islanding"),)
    assert rep.branches[0].security_factor == 1.0


def test_negligible_flow_flagged():
    rep = contingency_sweep(two_bus())
    assert rep.branches[0].negligible_flow and rep.branches[0].security_factor == 1.0


def test_injection_changes_factors(case14, report14):
    inj = security_factor_with_injection(case14, 14, 10.0)
    assert inj.factors()[1] == pytest.approx(1.5432, rel=0.015)
    assert inj.factors()[1] != report14.factors()[1]
    zero = security_factor_with_injection(case14, 14, 0.0)
    assert zero.factors() == report14.factors()


def test_injection_at_slack(case14, report14):
    # load added at the slack bus is met by the slack generator at that bus:
    # voltages, and hence every branch flow and factor, stay put
    inj = security_factor_with_injection(case14, 1, 10.0)
    assert len(inj.branches) == 20
    for a, b in zip(inj.branches, report14.branches):
        assert a.base_flow == pytest.approx(b.base_flow, rel=1e-9)
    from gridtariff.powerflow import solve_newton
    assert solve_newton(case14.add_load(1, 10.0)).p_gen[0] == pytest.approx(
        solve_newton(case14).p_gen[0] + 10.0, rel=1e-9)


def test_jobs_do_not_change_report(case14, report14):
    assert contingency_sweep(case14, jobs=4) == report14


def test_sweep_runtime(case14):
    t0 = time.perf_counter()
    contingency_sweep(case14)
    assert time.perf_counter() - t0 < 5.0


def test_sweep_csv_shape(case14, report14):
    text = sweep_csv(case14, report14, security_factor_with_injection(case14, 14, 10.0))
    lines = text.splitlines()
    assert lines[0] == ",".join(SWEEP_CSV_COLUMNS)
    assert len(lines) == 21
    rows = mall_table(case14, report14)
    assert rows[0].mall == pytest.approx(rows[0].capacity / rows[0].security_factor)


@pytest.mark.parametrize("metric", ["p", "q"])
def test_alternative_metrics(case14, metric):
    rep = contingency_sweep(case14, metric)
    assert rep.metric == metric and len(rep.branches) == 20
