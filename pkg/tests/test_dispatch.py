"""Instance wiring and the shared objective evaluator."""

import numpy as np
import pytest

from dopfkit.dispatch import (
    DispatchSchedule,
    bes_injection_pu,
    build_flows,
    evaluate_objective,
    voltage_violation_mask,
    worst_voltage_gap,
    zero_schedule,
)
from dopfkit.errors import InputError
from dopfkit.instance import DopfInstance
from dopfkit.network import CostConfig, Feeder, expected_losses, purchase_cost, solve_lindistflow
from dopfkit.rainflow import degradation_cost
from dopfkit.scenarios import PvSpec, ScenarioSet
from dopfkit.storage import BesSchedule, BesSpec, simulate_soc


def chain_feeder(n=3):
    return Feeder(n, [(v, v - 1, 0.05, 0.04) for v in range(1, n)])


def small_instance(S=2, T=3):
    feeder = chain_feeder(3)
    rng = np.random.default_rng(7)
    load_p = 0.2 + 0.05 * rng.random((T, 3))
    load_q = 0.3 * load_p
    load_p[:, 0] = 0.01
    load_q[:, 0] = 0.0
    values = 100.0 * rng.random((S, T, 1))
    scen = ScenarioSet(values=values, probabilities=np.full(S, 1.0 / S))
    return DopfInstance(
        feeder=feeder,
        load_p=load_p,
        load_q=load_q,
        pv_specs=[PvSpec(node=2, s_w=450.0)],
        bes_specs=[BesSpec(node=1, e_cap=75.0, ch_max=15.0, dis_max=15.0)],
        scenarios=scen,
        cost=CostConfig(c_loss=40.0, purchase_price=0.08),
    )


def test_shape_validation():
    inst = small_instance()
    with pytest.raises(InputError):
        DopfInstance(feeder=inst.feeder, load_p=inst.load_p[:, :2],
                     load_q=inst.load_q[:, :2], pv_specs=inst.pv_specs,
                     bes_specs=inst.bes_specs, scenarios=inst.scenarios,
                     cost=inst.cost)
    with pytest.raises(InputError):
        DopfInstance(feeder=inst.feeder, load_p=inst.load_p[:2],
                     load_q=inst.load_q[:2], pv_specs=inst.pv_specs,
                     bes_specs=inst.bes_specs, scenarios=inst.scenarios,
                     cost=inst.cost)  # horizon mismatch with scenarios


def test_device_node_range():
    inst = small_instance()
    with pytest.raises(InputError):
        DopfInstance(feeder=inst.feeder, load_p=inst.load_p,
                     load_q=inst.load_q, pv_specs=[PvSpec(node=0, s_w=450.0)],
                     bes_specs=[], scenarios=inst.scenarios, cost=inst.cost)


def test_scenario_exceeding_rating_rejected():
    inst = small_instance()
    hot = ScenarioSet(values=np.full((2, 3, 1), 500.0),
                      probabilities=np.array([0.5, 0.5]))
    with pytest.raises(InputError):
        DopfInstance(feeder=inst.feeder, load_p=inst.load_p,
                     load_q=inst.load_q, pv_specs=inst.pv_specs,
                     bes_specs=inst.bes_specs, scenarios=hot, cost=inst.cost)


def test_scatter_sums_duplicate_nodes():
    inst = small_instance()
    vals = np.array([[1.0, 2.0]])
    out = inst.scatter_to_nodes(vals, np.array([2, 2]))
    assert np.allclose(out, [[0.0, 0.0, 3.0]])


def test_bes_multiplier_profile_sums_scenarios():
    inst = small_instance()
    lam = np.zeros((2, 3, 3))
    lam[0, :, 1] = 1.0
    lam[1, :, 1] = 2.0
    prof = inst.bes_multiplier_profile(lam, 0)
    assert np.allclose(prof, 3.0 / inst.feeder.s_base)


def test_zero_schedule_zero_loads_costs_nothing():
    inst = small_instance()
    inst.load_p[:] = 0.0
    inst.load_q[:] = 0.0
    inst.pv_power_pu[:] = 0.0
    total, breakdown = evaluate_objective(inst, zero_schedule(inst))
    assert total == 0.0
    assert breakdown == {"degradation": 0.0, "loss": 0.0, "purchase": 0.0}
    assert np.allclose(zero_schedule(inst).q_pv, 0.0)


def test_build_flows_matches_manual_net_injections():
    inst = small_instance()
    sched = zero_schedule(inst)
    rng = np.random.default_rng(3)
    sched.q_pv = 0.1 * rng.standard_normal((inst.S, inst.T, inst.I))
    p_ch = np.array([5.0, 0.0, 2.0])
    p_dis = np.array([0.0, 4.0, 0.0])
    sched.bes = [BesSchedule(p_ch=p_ch, p_dis=p_dis,
                             soc=simulate_soc(inst.bes_specs[0], p_ch, p_dis, 1.0))]
    fs = build_flows(inst, sched)

    net_p = np.tile(inst.load_p, (inst.S, 1, 1))
    net_q = np.tile(inst.load_q, (inst.S, 1, 1))
    net_p[:, :, 2] -= inst.pv_power_pu[:, :, 0]
    net_p[:, :, 1] -= (p_dis - p_ch) / inst.feeder.s_base
    net_q[:, :, 2] -= sched.q_pv[:, :, 0]
    want = solve_lindistflow(inst.feeder, net_p, net_q)
    assert np.allclose(fs.P, want.P, atol=1e-15)
    assert np.allclose(fs.Q, want.Q, atol=1e-15)
    assert np.allclose(fs.V, want.V, atol=1e-15)


def test_objective_equals_componentwise_costs():
    inst = small_instance()
    sched = zero_schedule(inst)
    p_ch = np.array([10.0, 0.0, 0.0])
    p_dis = np.array([0.0, 8.0, 0.0])
    spec = inst.bes_specs[0]
    sched.bes = [BesSchedule(p_ch=p_ch, p_dis=p_dis,
                             soc=simulate_soc(spec, p_ch, p_dis, 1.0))]
    sched.q_pv = np.full((inst.S, inst.T, inst.I), 0.05)
    total, breakdown = evaluate_objective(inst, sched)

    fs = build_flows(inst, sched)
    pi = inst.scenarios.probabilities
    _, loss_t = expected_losses(fs, pi, inst.feeder, inst.cost)
    buy_t = purchase_cost(fs, pi, inst.cost)
    deg = degradation_cost(sched.bes[0].soc, spec.stress, spec.c_bes, spec.e_cap)
    assert np.isclose(breakdown["loss"], loss_t.sum(), rtol=1e-12)
    assert np.isclose(breakdown["purchase"], buy_t.sum(), rtol=1e-12)
    assert np.isclose(breakdown["degradation"], deg, rtol=1e-12)
    assert np.isclose(total, deg + loss_t.sum() + buy_t.sum(), rtol=1e-12)
    assert sched.flows is not None and sched.breakdown is not None


def test_degradation_model_selection_changes_cost():
    inst = small_instance()
    sched = zero_schedule(inst)
    p_ch = np.array([10.0, 0.0, 0.0])
    p_dis = np.array([0.0, 8.0, 0.0])
    spec = inst.bes_specs[0]
    sched.bes = [BesSchedule(p_ch=p_ch, p_dis=p_dis,
                             soc=simulate_soc(spec, p_ch, p_dis, 1.0))]
    _, none_bd = evaluate_objective(inst, sched, degradation="none")
    _, lin_bd = evaluate_objective(inst, sched, degradation="linear")
    assert none_bd["degradation"] == 0.0
    assert np.isclose(lin_bd["degradation"],
                      spec.linear_cost_rate() * (p_ch + p_dis).sum())


def test_bes_injection_sign():
    inst = small_instance()
    p_ch = np.array([5.0, 0.0, 0.0])
    p_dis = np.array([0.0, 3.0, 0.0])
    sched = BesSchedule(p_ch=p_ch, p_dis=p_dis,
                        soc=simulate_soc(inst.bes_specs[0], p_ch, p_dis, 1.0))
    inj = bes_injection_pu(inst, [sched])
    assert np.isclose(inj[0, 1], -5.0 / 1000.0)  # charging draws power
    assert np.isclose(inj[1, 1], 3.0 / 1000.0)


def test_voltage_mask_and_gap():
    feeder = chain_feeder(2)
    v = np.array([[1.0, 0.97], [1.0, 0.90]])
    mask = voltage_violation_mask(feeder, v)
    assert mask.tolist() == [False, True]
    gap = worst_voltage_gap(feeder, v)
    assert np.isclose(gap, (1 - feeder.epsilon) ** 2 - 0.90)
    assert worst_voltage_gap(feeder, v[:1]) == 0.0


def test_build_flows_rejects_wrong_shapes():
    inst = small_instance()
    sched = zero_schedule(inst)
    sched.q_pv = np.zeros((1, inst.T, inst.I))
    with pytest.raises(InputError):
        build_flows(inst, sched)
    sched = zero_schedule(inst)
    sched.bes = []
    with pytest.raises(InputError):
        build_flows(inst, sched)
