import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adnplan.grid import (
    Branch,
    Bus,
    DivergenceError,
    PowerFlowResult,
    RadialNetwork,
    TopologyError,
    balance_residual,
    branch_flow_residuals,
    check_limits,
    limit_excess,
    pge69,
    read_network,
    solve_power_flow,
)

from oracles import admittance_power_flow, two_bus_voltage


def two_bus(p_kw=0.0, q_kvar=0.0, r=0.05, x=0.05, **kw):
    # v_base 1 kV with s_base 1000 kVA makes the impedance base 1 ohm
    return RadialNetwork([Bus(1), Bus(2, p_kw, q_kvar)], [Branch(1, 2, r, x, **kw)],
                         v_base=1.0, s_base=1000.0)


@pytest.fixture(scope="module")
def net69():
    return pge69()


@pytest.fixture(scope="module")
def base69(net69):
    return solve_power_flow(net69)


def test_unloaded_two_bus_is_flat():
    res = solve_power_flow(two_bus())
    assert np.allclose(res.v_mag, 1.0)
    assert res.p_loss_total == 0.0
    assert balance_residual(res, two_bus()) == (0.0, 0.0)


def test_two_bus_matches_closed_form():
    net = two_bus(100.0, 100.0)
    res = solve_power_flow(net)
    assert res.v_mag[1] == pytest.approx(two_bus_voltage(0.05, 0.05, 0.1, 0.1), abs=1e-6)


def test_admittance_oracle_agrees_with_closed_form():
    net = two_bus(100.0, 100.0)
    v, _ = admittance_power_flow(net, [0, -100.0], [0, -100.0])
    assert abs(v[1]) == pytest.approx(two_bus_voltage(0.05, 0.05, 0.1, 0.1), abs=1e-9)


def test_69_bus_loss_matches_admittance_oracle(net69, base69):
    p, q = net69.load_injections()
    v, loss = admittance_power_flow(net69, p, q)
    assert base69.p_loss_total == pytest.approx(loss, rel=0.005)
    assert base69.p_loss_total == pytest.approx(225.0, rel=0.01)
    assert net69.bus_ids[int(np.argmin(base69.v_mag))] == net69.bus_ids[int(np.argmin(np.abs(v)))]
    assert base69.v_mag.min() == pytest.approx(np.abs(v).min(), rel=0.005)


def test_69_bus_residuals_and_balance(net69, base69):
    drop, flow = branch_flow_residuals(base69, net69)
    assert drop.max() < 1e-6 and flow.max() < 1e-6
    dp, dq = balance_residual(base69, net69)
    assert abs(dp) < 1e-3 and abs(dq) < 1e-3


def test_branch_losses_sum_to_total(net69, base69):
    zb = net69.v_base ** 2 * 1000.0 / net69.s_base
    r = np.array([br.r for br in net69.branches]) / zb
    per_branch = (np.abs(base69.branch_i) ** 2 * r).sum() * net69.s_base
    assert per_branch == pytest.approx(base69.p_loss_total, rel=1e-6)


def test_perturbed_voltages_break_balance(net69, base69):
    rng = np.random.default_rng(3)
    v = base69.v * (1 + 0.01 * rng.standard_normal(base69.v.shape))
    v[0] = base69.v[0]
    fake = PowerFlowResult(v, base69.branch_i, base69.branch_p, base69.branch_q,
                           base69.p_loss_total, base69.q_loss_total, base69.slack_p,
                           base69.slack_q, 0)
    dp, _ = balance_residual(fake, net69)
    assert abs(dp) > 1e-3


def test_check_limits_examples(net69, base69):
    assert check_limits(solve_power_flow(two_bus(10.0)), two_bus(10.0)) == []
    strict = RadialNetwork(net69.buses, net69.branches, v_min=0.95)
    under = [v for v in check_limits(solve_power_flow(strict), strict) if v.kind == "undervoltage"]
    assert under
    assert limit_excess(solve_power_flow(strict), strict) > 0


def test_zero_current_limit_reports_one_violation():
    net = two_bus(100.0, 50.0, i_max=0.0)
    vios = check_limits(solve_power_flow(net), net)
    assert [v.kind for v in vios] == ["overcurrent"]


def test_batched_solve_matches_individual(net69):
    p, q = net69.load_injections()
    scale = np.array([0.5, 1.0, 1.3])[:, None]
    batch = solve_power_flow(net69, p * scale, q * scale)
    for k in range(3):
        single = solve_power_flow(net69, p * scale[k], q * scale[k])
        assert batch.p_loss_total[k] == pytest.approx(single.p_loss_total, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 400.0))
def test_leaf_injection_raises_leaf_voltage(net69, extra):
    p, q = net69.load_injections()
    leaf = net69.index_of(65)
    before = solve_power_flow(net69, p, q).v_mag[leaf]
    p2 = p.copy()
    p2[leaf] += extra
    assert solve_power_flow(net69, p2, q).v_mag[leaf] >= before - 1e-12


def test_meshed_topology_is_rejected():
    buses = [Bus(1), Bus(2), Bus(3)]
    with pytest.raises(TopologyError):
        RadialNetwork(buses, [Branch(1, 2, 1, 1), Branch(2, 3, 1, 1), Branch(3, 1, 1, 1)])
    with pytest.raises(TopologyError):
        RadialNetwork([Bus(1), Bus(2), Bus(3), Bus(4)],
                      [Branch(1, 2, 1, 1), Branch(2, 1, 1, 1), Branch(3, 4, 1, 1)])


def test_overloaded_feeder_diverges():
    net = two_bus(5000.0, 5000.0, r=0.5, x=0.5)
    with pytest.raises(DivergenceError):
        solve_power_flow(net)


def test_network_round_trips_through_csv(tmp_path, net69):
    br = tmp_path / "branches.csv"
    bu = tmp_path / "buses.csv"
    br.write_text("from_bus,to_bus,r_ohm,x_ohm\n1,2,0.5,0.25\n2,3,0.4,0.2\n")
    bu.write_text("bus,p_kw,q_kvar\n1,0,0\n2,100,50\n3,80,40\n")
    net = read_network(br, bu)
    assert net.total_p_load == 180.0
    assert solve_power_flow(net).p_loss_total > 0
    assert len(net69.buses) == 69 and net69.total_p_load == pytest.approx(3802.19, abs=0.1)
