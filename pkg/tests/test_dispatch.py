import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adnplan.dispatch import (
    LowerConfig,
    OperatingContext,
    StorageDefaults,
    StorageUnit,
    level_values,
    optimize_dispatch,
    optimize_season,
    repair,
    soc_trajectory,
    validate_schedule,
    write_intraday_report,
)
from adnplan.grid import Branch, Bus, RadialNetwork, pge69
from adnplan.ibpso import SwarmConfig
from adnplan.plan import Plan

from oracles import brute_dispatch, dp_dispatch, soc_by_steps, two_bus_voltage

THREE_TIER = np.array([0.03] * 8 + [0.06] * 10 + [0.20] * 6)
OFF_PEAK = set(range(8))
PEAK = set(range(18, 24))
IDEAL = StorageDefaults(soc_min_frac=0.0, soc_max_frac=1.0, eta_ch=1.0, eta_dc=1.0,
                        soc_init_frac=0.5)
R, X = 0.05, 0.05
LOAD_P, LOAD_Q = 300.0, 100.0
LOAD_SCALE = 0.7 + 0.3 * np.sin(np.pi * np.arange(24) / 24)


def two_bus_net(r=R, x=X):
    return RadialNetwork([Bus(1), Bus(2, LOAD_P, LOAD_Q)], [Branch(1, 2, r, x)],
                         v_base=1.0, s_base=1000.0, v_min=0.5, v_max=1.5)


def two_bus_loss_kw(h, draw_kw):
    p = (LOAD_P * LOAD_SCALE[h] + draw_kw) / 1000.0
    q = LOAD_Q * LOAD_SCALE[h] / 1000.0
    v = two_bus_voltage(R, X, p, q)
    return R * (p * p + q * q) / (v * v) * 1000.0


def unit(**kw):
    base = dict(bus=2, energy_capacity=200.0, power_rating=50.0)
    base.update(kw)
    return StorageUnit(**base)


# -- state of charge -----------------------------------------------------------


def test_zero_schedule_keeps_soc_flat():
    assert np.all(soc_trajectory(np.zeros(24), unit()) == 100.0)


def test_one_hour_of_charge():
    u = unit(energy_capacity=200.0, soc_init_frac=0.5, eta_ch=0.9)
    assert soc_trajectory([10.0], u)[-1] == pytest.approx(109.0)


def test_one_hour_of_discharge():
    u = unit(eta_dc=0.9)
    soc = soc_trajectory([-9.0], u)
    assert soc[0] - soc[1] == pytest.approx(10.0)


@settings(max_examples=100)
@given(arrays(float, 24, elements=st.floats(-50, 50)), st.floats(0.5, 1.0), st.floats(0.5, 1.0))
def test_soc_matches_step_recomputation(levels, eta_ch, eta_dc):
    u = unit(eta_ch=eta_ch, eta_dc=eta_dc)
    oracle = soc_by_steps(levels, u.soc_init, eta_ch, eta_dc)
    assert np.max(np.abs(soc_trajectory(levels, u) - oracle)) < 1e-9


@given(st.floats(1.0, 50.0), st.floats(0.5, 1.0), st.floats(0.5, 1.0))
def test_round_trip_returns_product_of_efficiencies(e, eta_ch, eta_dc):
    u = unit(eta_ch=eta_ch, eta_dc=eta_dc, energy_capacity=1000.0)
    stored = float(u.energy_delta(e))
    delivered = -float(u.power_for_delta(-stored))
    assert soc_trajectory([e, -delivered], u)[-1] == pytest.approx(u.soc_init, abs=1e-9)
    assert delivered == pytest.approx(eta_ch * eta_dc * e, rel=1e-12)


# -- validation ----------------------------------------------------------------


def test_zero_schedule_is_valid():
    assert validate_schedule(np.zeros(24), unit()) == []


def test_double_rating_is_one_power_violation():
    levels = np.zeros(24)
    levels[5] = 100.0
    levels[6] = -50.0
    levels[7] = -50.0
    u = unit(eta_ch=1.0, eta_dc=1.0, soc_min_frac=0.0, soc_max_frac=1.0)
    vios = validate_schedule(levels, u)
    assert [v.kind for v in vios] == ["power"]


def test_charge_only_schedule_breaks_end_of_day_balance():
    levels = np.zeros(24)
    levels[2] = 10.0
    assert [v.kind for v in validate_schedule(levels, unit())] == ["end_of_day"]


def test_soc_band_violation():
    levels = np.zeros(24)
    levels[:3] = -50.0
    levels[3:6] = 50.0
    kinds = {v.kind for v in validate_schedule(levels, unit(eta_ch=1.0, eta_dc=1.0))}
    assert kinds == {"soc"}


def test_unit_parameter_checks():
    with pytest.raises(ValueError):
        unit(soc_min_frac=0.9, soc_max_frac=0.1)
    with pytest.raises(ValueError):
        unit(eta_ch=0.0)
    with pytest.raises(ValueError):
        unit(soc_init_frac=0.95)


# -- encoding and repair -------------------------------------------------------


def test_level_values_span_rating_with_top_code_repeated():
    assert level_values(2, 50.0).tolist() == [-50.0, 0.0, 50.0, 50.0]
    vals = level_values(3, 70.0)
    assert len(vals) == 8 and vals[3] == 0.0 and vals[-1] == vals[-2] == 70.0


@settings(max_examples=200)
@given(arrays(float, (3, 24), elements=st.floats(-50, 50)), st.floats(0.6, 1.0))
def test_repair_always_yields_valid_schedules(raw, eta):
    u = unit(eta_ch=eta, eta_dc=eta)
    for row in repair(raw, u):
        assert validate_schedule(row, u) == []


def test_repair_leaves_valid_schedules_alone():
    u = unit(eta_ch=1.0, eta_dc=1.0)
    levels = np.zeros(24)
    levels[1], levels[20] = 50.0, -50.0
    assert np.allclose(repair(levels[None], u)[0], levels)


# -- optimisation ---------------------------------------------------------------


def test_dp_oracle_matches_literal_enumeration():
    prices = THREE_TIER[[0, 1, 9, 10, 18, 19, 20, 2]]
    for soc0 in (0.0, 100.0, 200.0):
        dp = dp_dispatch(prices, two_bus_loss_kw, 100.0, 200.0, 0.0, 200.0, soc0)
        brute = brute_dispatch(prices, two_bus_loss_kw, 100.0, 0.0, 200.0, soc0, len(prices))
        assert dp[0] == pytest.approx(brute[0], rel=1e-12)


def two_bus_context(tariff=THREE_TIER, net=None):
    zeros = np.zeros((4, 24))
    return OperatingContext(net or two_bus_net(), zeros, zeros, np.tile(tariff, (4, 1)),
                            load_scale=np.tile(LOAD_SCALE, (4, 1)), storage=IDEAL)


def test_three_level_dispatch_matches_exhaustive_optimum():
    ctx = two_bus_context()
    plan = Plan(storage_kwh={2: 400.0}, storage_kw={2: 100.0})
    cfg = LowerConfig(SwarmConfig(20, 30), bits_per_hour=2)
    res = optimize_season(ctx, plan, 0, cfg)
    best, sched = dp_dispatch(THREE_TIER, two_bus_loss_kw, 100.0, 400.0, 0.0, 400.0, 200.0)
    assert res.feasible
    assert res.f2 == pytest.approx(best, rel=1e-7)


def test_three_tier_tariff_charges_off_peak_and_discharges_on_peak():
    ctx = two_bus_context()
    plan = Plan(storage_kwh={2: 400.0}, storage_kw={2: 100.0})
    res = optimize_dispatch(ctx, plan, LowerConfig(SwarmConfig(20, 30), bits_per_hour=2))
    for s in range(4):
        p = res.schedule.p_e[s, :, 0]
        assert set(np.nonzero(p > 1e-9)[0]) <= OFF_PEAK
        assert set(np.nonzero(p < -1e-9)[0]) <= PEAK
        assert (p < -1e-9).any()


def test_flat_tariff_on_lossless_feeder_keeps_storage_idle():
    ctx = two_bus_context(np.full(24, 0.05), two_bus_net(r=0.0))
    ctx.storage = StorageDefaults()
    plan = Plan(storage_kwh={2: 400.0}, storage_kw={2: 100.0})
    res = optimize_dispatch(ctx, plan, LowerConfig(SwarmConfig(10, 10)))
    assert np.all(res.schedule.p_e == 0.0)
    assert np.allclose(res.f2, 0.0)


def test_no_storage_gives_loss_cost_only():
    ctx = two_bus_context()
    res = optimize_dispatch(ctx, Plan())
    expected = sum(THREE_TIER[h] * two_bus_loss_kw(h, 0.0) for h in range(24))
    assert res.schedule.p_e.shape == (4, 24, 0)
    assert res.f2 == pytest.approx(np.full(4, expected), rel=1e-8)
    assert res.feasible


def test_69_bus_schedule_follows_tariff_tiers():
    net = pge69()
    zeros = np.zeros((4, 24))
    ctx = OperatingContext(net, zeros, zeros, np.tile(THREE_TIER, (4, 1)))
    plan = Plan(storage_kwh={61: 400.0}, storage_kw={61: 100.0})
    res = optimize_season(ctx, plan, 0)
    assert res.feasible
    p = res.p_e[:, 0]
    assert set(np.nonzero(p > 1e-6)[0]) <= OFF_PEAK
    assert set(np.nonzero(p < -1e-6)[0]) <= PEAK
    assert validate_schedule(p, ctx.storage.units_for(plan)[0]) == []


def test_same_plan_and_seed_give_same_schedule():
    ctx = two_bus_context()
    plan = Plan(storage_kwh={2: 300.0}, storage_kw={2: 100.0})
    a = optimize_dispatch(ctx, plan, LowerConfig(SwarmConfig(10, 10)))
    b = optimize_dispatch(ctx, plan, LowerConfig(SwarmConfig(10, 10)))
    assert np.array_equal(a.schedule.p_e, b.schedule.p_e)


def test_intraday_report_has_one_row_per_hour(tmp_path):
    ctx = two_bus_context()
    plan = Plan(storage_kwh={2: 400.0}, storage_kw={2: 100.0})
    res = optimize_dispatch(ctx, plan, LowerConfig(SwarmConfig(10, 10), bits_per_hour=2))
    path = tmp_path / "dispatch.csv"
    write_intraday_report(path, ctx, plan, res)
    lines = path.read_text().splitlines()
    assert lines[0] == "season,hour,wt_kw,pv_kw,storage_kw_signed,loss_kw"
    assert len(lines) == 1 + 96
    assert math.isclose(float(lines[1].split(",")[-1]), res.losses[0, 0], rel_tol=1e-5)
