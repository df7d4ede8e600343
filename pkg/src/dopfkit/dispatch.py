"""Dispatch schedules and the one true objective evaluator.

Both solver paths (decomposition and the monolithic oracle) report costs
through `evaluate_objective`, which recomputes flows from the device
decisions rather than trusting whatever flow arrays a schedule carries.
That keeps primal/dual bookkeeping from drifting apart.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import InputError
from .network import FlowState, expected_losses, purchase_cost, solve_lindistflow, voltage_band
from .storage import BesSchedule, schedule_cost, simulate_soc


@dataclass
class DispatchSchedule:
    q_pv: np.ndarray                 # (S, T, I) p.u. inverter reactive power
    bes: List[BesSchedule]           # kW, first-stage
    flows: Optional[FlowState] = None
    breakdown: Optional[Dict[str, float]] = None


def zero_schedule(instance):
    bes = []
    for spec in instance.bes_specs:
        z = np.zeros(instance.T)
        bes.append(BesSchedule(p_ch=z.copy(), p_dis=z.copy(),
                               soc=simulate_soc(spec, z, z, instance.dt)))
    return DispatchSchedule(q_pv=np.zeros((instance.S, instance.T, instance.I)), bes=bes)


def bes_injection_pu(instance, bes_schedules):
    """(T, n_nodes) net battery injection in p.u., shared by all scenarios."""
    inj = np.zeros((instance.T, instance.feeder.n_nodes))
    for spec, sched in zip(instance.bes_specs, bes_schedules):
        inj[:, spec.node] += instance.feeder.kw_to_pu(sched.injection)
    return inj


def build_flows(instance, schedule):
    """Network state implied by the device decisions, per (s, t)."""
    q_pv = np.asarray(schedule.q_pv, dtype=float)
    want = (instance.S, instance.T, instance.I)
    if q_pv.shape != want:
        raise InputError(f"q_pv must have shape {want}, got {q_pv.shape}")
    if len(schedule.bes) != instance.J:
        raise InputError("one battery schedule per battery is required")
    net_p = np.broadcast_to(instance.load_p, (instance.S,) + instance.load_p.shape).copy()
    net_q = np.broadcast_to(instance.load_q, net_p.shape).copy()
    net_p -= instance.scatter_to_nodes(instance.pv_power_pu, instance.pv_nodes)
    net_p -= bes_injection_pu(instance, schedule.bes)
    net_q -= instance.scatter_to_nodes(q_pv, instance.pv_nodes)
    return solve_lindistflow(instance.feeder, net_p, net_q)


def voltage_violation_mask(feeder, v):
    """Boolean (..., ) any-node-out-of-band mask over the leading axes of v."""
    lo, hi = voltage_band(feeder)
    ratio = v / feeder.v0
    return np.any((ratio < lo) | (ratio > hi), axis=-1)


def evaluate_objective(instance, schedule, degradation="rainflow"):
    """Total $ cost and its breakdown; flows are recomputed from decisions."""
    fs = build_flows(instance, schedule)
    pi = instance.scenarios.probabilities
    _, loss_t = expected_losses(fs, pi, instance.feeder, instance.cost)
    buy_t = purchase_cost(fs, pi, instance.cost)
    deg = 0.0
    for spec, sched in zip(instance.bes_specs, schedule.bes):
        deg += schedule_cost(spec, sched, np.zeros(instance.T), instance.dt,
                             degradation=degradation)
    breakdown = {
        "degradation": float(deg),
        "loss": float(loss_t.sum()),
        "purchase": float(buy_t.sum()),
    }
    total = sum(breakdown.values())
    schedule.flows = fs
    schedule.breakdown = breakdown
    return total, breakdown


def worst_voltage_gap(feeder, v):
    """Largest band violation over all entries of v (0 when all inside)."""
    lo, hi = voltage_band(feeder)
    ratio = v / feeder.v0
    return float(np.maximum(lo - ratio, ratio - hi).max(initial=0.0))
