"""Schedule evaluation: Monte-Carlo voltage screening, cost reports, studies.

Everything here treats a schedule as fixed history: batteries follow their
first-stage profile, and each test scenario gets its own reactive dispatch
from a simple volt-var rule (or zeros, for the pessimistic variant).
"""

import time
from dataclasses import dataclass

import numpy as np

from .coordinator import run_master
from .dispatch import bes_injection_pu
from .errors import InputError
from .instance import DopfInstance
from .network import solve_lindistflow, voltage_band
from .scenarios import ScenarioSet
from .subproblems import reactive_capacity


@dataclass
class InstabilityReport:
    tested: int
    violating: int
    probability: float
    worst_gap: np.ndarray    # (M,) largest band violation per scenario
    worst_node: np.ndarray   # (M,) int
    worst_time: np.ndarray   # (M,) int

    def __post_init__(self):
        assert self.tested >= 0 and 0 <= self.violating <= self.tested


@dataclass
class CostReport:
    modeled_bes_cost: float      # $/day under the schedule's own model
    peak_shaving_benefit: float  # $/day purchase+loss saved vs baseline
    modeled_net_benefit: float
    actual_bes_cost: float       # $/day, cycle-counted on the realized SoC
    actual_net_benefit: float
    fleet_value: float           # $ replacement value of all batteries
    life_expectancy_years: float


def life_expectancy_years(fleet_value, daily_cost):
    """Years until the accumulated daily wear pays for the fleet."""
    if daily_cost <= 0.0:
        return float("inf")
    return fleet_value / (365.0 * daily_cost)


def _test_limits_pu(instance, test_values_kw):
    s_w = np.array([p.s_w for p in instance.pv_specs])
    if test_values_kw.size and np.any(test_values_kw > s_w * (1 + 1e-9)):
        raise InputError("a test scenario exceeds its inverter rating")
    cap = reactive_capacity(np.broadcast_to(s_w, test_values_kw.shape),
                            test_values_kw)
    return instance.feeder.kw_to_pu(cap)


def volt_var_reactive(instance, test_values_kw, bes_schedules,
                      iterations=200):
    """Per-scenario reactive dispatch flattening the worst voltage deviation.

    For every (scenario, interval) cell, runs a fixed number of projected
    subgradient steps on max_n (v2_n - v0^2)^2 over the inverter capacity
    box at the realized PV output.  Deterministic; returns q in p.u. with
    shape (M, T, I).
    """
    feeder = instance.feeder
    test_values_kw = np.asarray(test_values_kw, dtype=float)
    m_count = test_values_kw.shape[0]
    if not instance.I:
        return np.zeros((m_count, instance.T, 0))
    q_lim = _test_limits_pu(instance, test_values_kw)
    w_pu = feeder.kw_to_pu(test_values_kw)

    net_p = np.broadcast_to(instance.load_p,
                            (m_count,) + instance.load_p.shape).copy()
    net_p -= instance.scatter_to_nodes(w_pu, instance.pv_nodes)
    net_p -= bes_injection_pu(instance, bes_schedules)[None, :, :]
    net_q = np.broadcast_to(instance.load_q, net_p.shape).copy()

    paths = feeder.path_matrix
    base_flow = solve_lindistflow(feeder, net_p, net_q)
    drop0 = np.einsum("nb,mtb->mtn",
                      paths, feeder.r * base_flow.P + feeder.x * base_flow.Q)
    # v2(q) = v0^2 - drop0 + G q, cell by cell
    g_mat = paths @ (feeder.x[:, None] * paths[instance.pv_nodes].T)  # (n, I)

    q = np.zeros((m_count, instance.T, instance.I))
    best_q = q.copy()
    dev = -drop0 + np.einsum("ni,mti->mtn", g_mat, q)
    best_val = np.max(dev**2, axis=-1)
    scale = 0.5 * float(q_lim.max(initial=0.0))
    if scale == 0.0:
        return best_q
    for k in range(1, iterations + 1):
        dev = -drop0 + np.einsum("ni,mti->mtn", g_mat, q)
        sq = dev**2
        val = np.max(sq, axis=-1)
        better = val < best_val
        best_val = np.where(better, val, best_val)
        best_q = np.where(better[..., None], q, best_q)
        idx = np.argmax(sq, axis=-1)                       # (M, T)
        d_star = np.take_along_axis(dev, idx[..., None], axis=-1)
        grad = 2.0 * d_star * g_mat[idx, :]                # (M, T, I)
        gn = np.linalg.norm(grad, axis=-1, keepdims=True)
        step = scale / np.sqrt(k)
        q = np.clip(q - step * np.where(gn > 0, grad / np.where(gn > 0, gn, 1.0), 0.0),
                    -q_lim, q_lim)
    return best_q


def monte_carlo_voltage_test(schedule, instance, test_set,
                             q_zero=False, iterations=200):
    """Fraction of test scenarios whose voltages leave the band."""
    values = np.asarray(test_set.values, dtype=float)
    if values.ndim != 3 or values.shape[1] != instance.T \
            or values.shape[2] != instance.I:
        raise InputError("test set shape must be (M, T, I) matching the instance")
    m_count = values.shape[0]
    if q_zero or not instance.I:
        q = np.zeros((m_count, instance.T, instance.I))
    else:
        q = volt_var_reactive(instance, values, schedule.bes, iterations)

    feeder = instance.feeder
    net_p = np.broadcast_to(instance.load_p,
                            (m_count,) + instance.load_p.shape).copy()
    net_p -= instance.scatter_to_nodes(feeder.kw_to_pu(values),
                                       instance.pv_nodes)
    net_p -= bes_injection_pu(instance, schedule.bes)[None, :, :]
    net_q = np.broadcast_to(instance.load_q, net_p.shape).copy()
    net_q -= instance.scatter_to_nodes(q, instance.pv_nodes)
    fs = solve_lindistflow(feeder, net_p, net_q)

    lo, hi = voltage_band(feeder)
    ratio = fs.V / feeder.v0
    gap = np.maximum(lo - ratio, ratio - hi)               # (M, T, n)
    flat = gap.reshape(m_count, -1)
    worst = flat.argmax(axis=1)
    worst_gap = flat[np.arange(m_count), worst]
    worst_time, worst_node = np.unravel_index(worst, gap.shape[1:])
    violating = int(np.count_nonzero(worst_gap > 0.0))
    return InstabilityReport(
        tested=m_count,
        violating=violating,
        probability=violating / m_count if m_count else 0.0,
        worst_gap=worst_gap,
        worst_node=worst_node.astype(int),
        worst_time=worst_time.astype(int),
    )


def cost_report(schedule, instance, baseline_schedule, model="rainflow"):
    """Cost/benefit rows for a schedule against a no-battery baseline."""
    from .dispatch import evaluate_objective

    _, own = evaluate_objective(instance, schedule, degradation=model)
    _, actual = evaluate_objective(instance, schedule, degradation="rainflow")
    _, base = evaluate_objective(instance, baseline_schedule,
                                 degradation="rainflow")
    benefit = (base["purchase"] + base["loss"]) \
        - (own["purchase"] + own["loss"])
    fleet = float(sum(b.c_bes * b.e_cap for b in instance.bes_specs))
    return CostReport(
        modeled_bes_cost=own["degradation"],
        peak_shaving_benefit=benefit,
        modeled_net_benefit=benefit - own["degradation"],
        actual_bes_cost=actual["degradation"],
        actual_net_benefit=benefit - actual["degradation"],
        fleet_value=fleet,
        life_expectancy_years=life_expectancy_years(fleet, actual["degradation"]),
    )


def schedule_throughput_kwh(schedule, dt):
    """Total grid-side energy moved through all batteries."""
    return float(sum((b.p_ch + b.p_dis).sum() * dt for b in schedule.bes))


def no_bes_baseline(instance, cfg=None):
    """Solve the same feeder with every battery held idle.

    Reactive dispatch is re-optimized for the battery-free flows, so the
    baseline is the best the feeder can do without storage, not just the
    schedule with its batteries zeroed.
    """
    from .dispatch import zero_schedule

    variant = DopfInstance(feeder=instance.feeder, load_p=instance.load_p,
                           load_q=instance.load_q, pv_specs=instance.pv_specs,
                           bes_specs=[], scenarios=instance.scenarios,
                           cost=instance.cost, dt=instance.dt)
    res = run_master(variant, cfg)
    sched = zero_schedule(instance)
    sched.q_pv = res.schedule.q_pv
    return sched


def degradation_model_variants(instance, cfg=None,
                               models=("none", "linear", "rainflow")):
    """Full solves with the battery wear model swapped out."""
    out = {}
    for model in models:
        out[model] = run_master(instance, cfg, degradation=model)
    return out


def subset_scenarios(instance, s_count):
    """Same instance, first s_count scenarios, uniform probabilities."""
    if not 1 <= s_count <= instance.S:
        raise InputError(f"cannot take {s_count} of {instance.S} scenarios")
    scen = ScenarioSet(values=instance.scenarios.values[:s_count].copy(),
                       probabilities=np.full(s_count, 1.0 / s_count))
    return DopfInstance(feeder=instance.feeder, load_p=instance.load_p,
                        load_q=instance.load_q, pv_specs=instance.pv_specs,
                        bes_specs=instance.bes_specs, scenarios=scen,
                        cost=instance.cost, dt=instance.dt)


@dataclass
class ScalingRow:
    s_count: int
    subproblems: int
    wall_time: float
    dual_value: float


def scaling_study(instance, s_values, cfg=None):
    """Dual solves over growing scenario counts; times are wall-clock."""
    s_values = list(s_values)
    if s_values != sorted(s_values):
        raise InputError("scenario counts must be ascending")
    rows = []
    for s_count in s_values:
        sub = subset_scenarios(instance, s_count)
        t0 = time.perf_counter()
        res = run_master(sub, cfg)
        dt_run = time.perf_counter() - t0
        rows.append(ScalingRow(s_count=s_count,
                               subproblems=res.subproblems_per_iteration,
                               wall_time=dt_run,
                               dual_value=res.dual_value))
    return rows


def fit_scaling(s_values, times):
    """Least-squares fit quality: linear a+bS versus quadratic-only a+cS^2."""
    s = np.asarray(s_values, dtype=float)
    y = np.asarray(times, dtype=float)
    ones = np.ones_like(s)

    def sse(design):
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        return float(resid @ resid)

    sse_lin = sse(np.column_stack([ones, s]))
    sse_quad = sse(np.column_stack([ones, s**2]))
    total = float(((y - y.mean()) ** 2).sum())
    r2_lin = 1.0 - sse_lin / total if total > 0 else 1.0
    return {"sse_linear": sse_lin, "sse_quadratic": sse_quad,
            "r2_linear": r2_lin}
