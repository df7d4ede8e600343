"""One-shot primal solver used as an accuracy reference.

Not a production path: it exists so the decomposition has something honest
to be compared against on desk-size instances.  Two modes:

  * "grid" (J <= 1): enumerate battery net-power profiles on a per-interval
    grid, rank them by a lower bound that relaxes only the voltage band,
    then finish candidates in bound order until the bound crosses the best
    feasible cost.  Exact up to the grid resolution.
  * "subgradient": projected subgradient over all device variables with an
    escalating quadratic voltage penalty; the best feasible iterate wins.
    Approximate, but it scales past one battery.

Costs are always reported through `evaluate_objective`, the same evaluator
the decomposition uses.
"""

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .dispatch import (
    DispatchSchedule,
    bes_injection_pu,
    build_flows,
    evaluate_objective,
    worst_voltage_gap,
    zero_schedule,
)
from .errors import InfeasibleError, InputError
from .network import solve_lindistflow, voltage_band
from .storage import (
    BesSchedule,
    _degradation_value_grad,
    _project_corridor,
    simulate_soc,
)


@dataclass
class MonolithicConfig:
    mode: str = "auto"             # "auto" | "grid" | "subgradient"
    grid_points: Optional[int] = None  # per-interval levels; None = auto
    iterations: int = 600          # subgradient mode
    penalty_rounds: int = 5
    tol: float = 1e-9
    allow_large: bool = False

    def __post_init__(self):
        if self.mode not in ("auto", "grid", "subgradient"):
            raise InputError(f"unknown mode '{self.mode}'")
        if self.grid_points is not None and self.grid_points < 3:
            raise InputError("grid needs at least 3 levels per interval")


@dataclass
class MonolithicResult:
    schedule: DispatchSchedule
    objective: float
    mode: str
    band_gap: float  # worst voltage-band violation (0 = feasible)


def duality_gap(primal, dual):
    """Absolute and relative gap between a primal cost and a dual bound."""
    gap = primal - dual
    return gap, gap / max(abs(primal), 1e-9)


def _check_size(instance, cfg):
    big = (instance.feeder.n_nodes > 6 or instance.T > 6
           or instance.S > 4 or instance.J > 2)
    if big and not cfg.allow_large:
        raise InputError(
            "the one-shot solver is a reference for desk-size instances "
            "(n_nodes <= 6, T <= 6, S <= 4, J <= 2); pass allow_large=True "
            "to run it anyway")


def _grid_levels(spec, t_count, cfg):
    if cfg.grid_points is not None:
        g = cfg.grid_points
    else:
        # keep the candidate table around 3e4 rows: each feasible row pays a
        # python-level cycle count, which dominates past that
        g = int(round(3e4 ** (1.0 / t_count)))
        g = min(33, max(5, g))
    levels = np.linspace(-spec.dis_max, spec.ch_max, g)
    return np.unique(np.concatenate([levels, [0.0]]))


def _reactive_box_step(feeder, base_q, q_lim, pv_nodes, r):
    """Loss-minimizing q per cell with only the box limits (band relaxed)."""
    paths = feeder.path_matrix  # (n_nodes, n_branches)
    m = paths[pv_nodes].T       # (n_branches, I): branch b on path to unit i

    def objective(q):
        flow = base_q - m @ q
        val = float(r @ flow**2)
        grad = -2.0 * (m.T @ (r * flow))
        return val, grad

    if q_lim.size == 0:
        return np.zeros(0), float(r @ base_q**2)
    res = optimize.minimize(objective, np.zeros(q_lim.size), jac=True,
                            method="L-BFGS-B",
                            bounds=[(-l, l) for l in q_lim])
    return res.x, float(res.fun)


def _reactive_band_polish(feeder, base_p, base_q, q_lim, pv_nodes, r, x):
    """Loss-minimizing q for one cell with the voltage band enforced."""
    paths = feeder.path_matrix
    m = paths[pv_nodes].T
    lo, hi = voltage_band(feeder)
    # squared-voltage proxy: v0^2 - (A r P + A x Q) within [lo, hi] * v0^2
    arp = paths @ (r * base_p)
    axq0 = paths @ (x * base_q)
    mx = paths @ (np.diag(x) @ m) if q_lim.size else np.zeros((feeder.n_nodes, 0))
    v2 = feeder.v0**2
    # lo*v2 <= v2 - arp - axq0 + mx @ q <= hi*v2

    def objective(q):
        flow = base_q - m @ q
        return float(r @ flow**2)

    def grad(q):
        flow = base_q - m @ q
        return -2.0 * (m.T @ (r * flow))

    cons = [
        {"type": "ineq", "fun": lambda q: (v2 - arp - axq0 + mx @ q) - lo * v2,
         "jac": lambda q: mx},
        {"type": "ineq", "fun": lambda q: hi * v2 - (v2 - arp - axq0 + mx @ q),
         "jac": lambda q: -mx},
    ]
    res = optimize.minimize(objective, np.zeros(q_lim.size), jac=grad,
                            method="SLSQP", constraints=cons,
                            bounds=[(-l, l) for l in q_lim],
                            options={"maxiter": 200, "ftol": 1e-12})
    if not res.success:
        return None
    ok = (v2 - arp - axq0 + mx @ res.x)
    if np.any(ok < lo * v2 - 1e-9) or np.any(ok > hi * v2 + 1e-9):
        return None
    return res.x


def _assemble_q(instance, w_kw, degradation):
    """Given a battery net-draw profile (kW), pick q and price the result.

    Returns (schedule, total, feasible).  The reactive step first ignores the
    voltage band; only cells that end up outside it get the constrained
    polish.
    """
    feeder = instance.feeder
    r, x = feeder.r, feeder.x
    bes = []
    for spec in instance.bes_specs:
        p_ch = np.maximum(w_kw, 0.0)
        p_dis = np.maximum(-w_kw, 0.0)
        bes.append(BesSchedule(p_ch=p_ch, p_dis=p_dis,
                               soc=simulate_soc(spec, p_ch, p_dis, instance.dt)))
    schedule = DispatchSchedule(
        q_pv=np.zeros((instance.S, instance.T, instance.I)), bes=bes)
    fs = build_flows(instance, schedule)

    q_pv = np.zeros((instance.S, instance.T, instance.I))
    lo, hi = voltage_band(feeder)
    for s in range(instance.S):
        for t in range(instance.T):
            base_p = fs.P[s, t]
            base_q = fs.Q[s, t]
            q_lim = instance.q_max_pu[s, t] if instance.I else np.zeros(0)
            q, _ = _reactive_box_step(feeder, base_q, q_lim,
                                      instance.pv_nodes, r)
            flow_q = base_q
            if instance.I:
                flow_q = base_q - feeder.path_matrix[instance.pv_nodes].T @ q
            v2 = feeder.v0**2 - feeder.path_matrix @ (r * base_p + x * flow_q)
            ratio = v2 / feeder.v0**2
            if np.any(ratio < lo - 1e-12) or np.any(ratio > hi + 1e-12):
                q = _reactive_band_polish(feeder, base_p, base_q, q_lim,
                                          instance.pv_nodes, r, x)
                if q is None:
                    return None, np.inf, False
            q_pv[s, t] = q
    schedule.q_pv = q_pv
    total, _ = evaluate_objective(instance, schedule, degradation)
    gap = worst_voltage_gap(feeder, schedule.flows.V)
    return schedule, total, gap <= 1e-9


def _solve_grid(instance, cfg, degradation):
    feeder = instance.feeder
    r = feeder.r
    pi = instance.scenarios.probabilities
    price = instance.cost.price(instance.T)
    t_count = instance.T

    if instance.J == 0:
        cand_w = np.zeros((1, t_count))
        deg = np.zeros(1)
    else:
        spec = instance.bes_specs[0]
        levels = _grid_levels(spec, t_count, cfg)
        cand_w = np.array(list(itertools.product(levels, repeat=t_count)))
        p_ch = np.maximum(cand_w, 0.0)
        p_dis = np.maximum(-cand_w, 0.0)
        dsoc = (spec.eta_c * p_ch - p_dis / spec.eta_d) * instance.dt / spec.e_cap
        soc = spec.soc_init + np.cumsum(dsoc, axis=1)
        ok = np.all((soc >= spec.soc_min - 1e-12) & (soc <= spec.soc_max + 1e-12),
                    axis=1)
        ok &= (soc[:, -1] >= spec.soc_end_lo - 1e-12)
        ok &= (soc[:, -1] <= spec.soc_end_hi + 1e-12)
        if not np.any(ok):
            raise InfeasibleError("no battery profile on the grid satisfies "
                                  "the state-of-charge corridor")
        cand_w, soc = cand_w[ok], soc[ok]
        p_ch, p_dis = p_ch[ok], p_dis[ok]
        if degradation == "rainflow":
            full = np.concatenate(
                [np.full((soc.shape[0], 1), spec.soc_init), soc], axis=1)
            from .rainflow import degradation_cost
            deg = np.array([degradation_cost(np.clip(row, 0.0, 1.0),
                                             spec.stress, spec.c_bes, spec.e_cap)
                            for row in full])
        elif degradation == "linear":
            deg = spec.linear_cost_rate() * instance.dt * (p_ch + p_dis).sum(axis=1)
        elif degradation == "none":
            deg = np.zeros(soc.shape[0])
        else:
            raise InputError(f"unknown degradation model '{degradation}'")

    # network cost pieces as exact quadratics in the battery draw w_t (p.u.)
    zero = zero_schedule(instance)
    fs0 = build_flows(instance, zero)
    node = instance.bes_specs[0].node if instance.J else 0
    mask = feeder.path_matrix[node]               # branch on path root->node
    w_pu = feeder.kw_to_pu(cand_w)                # (M, T)

    # purchase: price_t * sum_s pi_s (P0 + w);  P flows: base + w * mask
    base_purchase = float(sum(price[t] * pi @ fs0.P[:, t, 0]
                              for t in range(t_count)))
    purchase = base_purchase + w_pu @ price

    c_over_v2 = instance.cost.c_loss / feeder.v0**2
    base_loss = np.zeros(t_count)
    lin = np.zeros(t_count)
    for t in range(t_count):
        pb = fs0.P[:, t, :]                       # (S, n)
        base_loss[t] = c_over_v2 * float(pi @ (pb**2 @ r))
        lin[t] = 2.0 * c_over_v2 * float(pi @ (pb @ (r * mask)))
    quad = c_over_v2 * float(r @ mask**2)
    loss_p = base_loss.sum() + w_pu @ lin + quad * (w_pu**2).sum(axis=1)

    # reactive loss lower bound: per-cell box step with the band relaxed
    q_floor = 0.0
    for s in range(instance.S):
        for t in range(t_count):
            q_lim = instance.q_max_pu[s, t] if instance.I else np.zeros(0)
            _, val = _reactive_box_step(feeder, fs0.Q[s, t], q_lim,
                                        instance.pv_nodes, r)
            q_floor += c_over_v2 * pi[s] * val

    lb = deg + purchase + loss_p + q_floor
    order = np.argsort(lb, kind="stable")

    best_cost, best_schedule = np.inf, None
    for idx in order:
        if lb[idx] >= best_cost - 1e-12:
            break
        schedule, total, feasible = _assemble_q(instance, cand_w[idx],
                                                degradation)
        if feasible and total < best_cost:
            best_cost, best_schedule = total, schedule
    if best_schedule is None:
        raise InfeasibleError("voltage band infeasible for every candidate "
                              "battery profile on the grid")
    gap = worst_voltage_gap(feeder, best_schedule.flows.V)
    return MonolithicResult(schedule=best_schedule, objective=float(best_cost),
                            mode="grid", band_gap=float(gap))


def _solve_subgradient(instance, cfg, degradation):
    feeder = instance.feeder
    r, x = feeder.r, feeder.x
    paths = feeder.path_matrix
    pi = instance.scenarios.probabilities
    price = instance.cost.price(instance.T)
    t_count = instance.T
    c_over_v2 = instance.cost.c_loss / feeder.v0**2
    lo, hi = voltage_band(feeder)
    v2 = feeder.v0**2

    specs = instance.bes_specs
    u = [np.zeros(2 * t_count) for _ in specs]   # (p_ch, p_dis) kW per battery
    q = np.zeros((instance.S, instance.T, instance.I))
    q_lim = instance.q_max_pu

    def schedules():
        out = []
        for spec, uj in zip(specs, u):
            p_ch, p_dis = uj[:t_count].copy(), uj[t_count:].copy()
            out.append(BesSchedule(p_ch=p_ch, p_dis=p_dis,
                                   soc=simulate_soc(spec, p_ch, p_dis,
                                                    instance.dt)))
        return out

    best_cost, best = np.inf, None
    pen = 10.0 * max(instance.cost.c_loss, float(np.max(price)), 1.0)
    power_scale = max([s.ch_max for s in specs] + [s.dis_max for s in specs]
                      + [1.0])
    for _ in range(cfg.penalty_rounds):
        for k in range(1, cfg.iterations + 1):
            sched = DispatchSchedule(q_pv=q.copy(), bes=schedules())
            fs = build_flows(instance, sched)
            # band residuals on the squared-voltage proxy, linear in flows
            drop = np.einsum("nb,stb->stn", paths, r * fs.P + x * fs.Q)
            v2n = v2 - drop
            over = np.maximum(v2n - hi * v2, 0.0)
            under = np.maximum(lo * v2 - v2n, 0.0)

            total, _ = evaluate_objective(instance, sched, degradation)
            gap = worst_voltage_gap(feeder, fs.V)
            if gap <= 1e-9 and total < best_cost:
                if all(not _soc_violated(spec, s2)
                       for spec, s2 in zip(specs, sched.bes)):
                    best_cost, best = total, sched

            gv = 2.0 * (over - under)                 # d penalty / d v2n
            gP = -np.einsum("stn,nb->stb", gv, paths) * r * pen
            gQ = -np.einsum("stn,nb->stb", gv, paths) * x * pen
            gP += 2.0 * c_over_v2 * pi[:, None, None] * (r * fs.P)
            gQ += 2.0 * c_over_v2 * pi[:, None, None] * (r * fs.Q)
            gP[..., 0] = pi[:, None] * price[None, :]  # purchase on root draw
            gQ[..., 0] = 0.0

            # chain through the subtree sums to the injections; the root
            # draw is the total net load, so its gradient reaches every node
            g_inj_p = -np.einsum("stb,nb->stn", gP, paths)
            g_inj_p -= gP[..., 0][..., None]
            g_inj_q = -np.einsum("stb,nb->stn", gQ, paths)

            gq = (g_inj_q[:, :, instance.pv_nodes] if instance.I
                  else np.zeros_like(q))
            gu = []
            for j, spec in enumerate(specs):
                # injection = p_dis - p_ch, first stage: sum over scenarios
                gj = g_inj_p[:, :, spec.node].sum(axis=0) / feeder.s_base
                _, deg_grad = _degradation_value_grad(
                    spec, u[j], sched.bes[j].soc, instance.dt, degradation)
                gu.append(deg_grad + np.concatenate([-gj, gj]))

            norm = max(np.sqrt(sum(float(np.sum(g**2)) for g in gu)
                               + float(np.sum(gq**2))), 1e-12)
            step = 0.2 * power_scale / (norm * np.sqrt(k))
            for j, spec in enumerate(specs):
                u[j] = _project_corridor(spec, u[j] - step * gu[j],
                                         instance.dt, tol=1e-10)
            if instance.I:
                q = np.clip(q - step * gq, -q_lim, q_lim)
        if best is not None:
            break
        pen *= 10.0

    if best is None:
        best = DispatchSchedule(q_pv=q.copy(), bes=schedules())
    total, _ = evaluate_objective(instance, best, degradation)
    gap = worst_voltage_gap(feeder, best.flows.V)
    return MonolithicResult(schedule=best, objective=float(total),
                            mode="subgradient", band_gap=float(gap))


def _soc_violated(spec, sched, tol=1e-8):
    s = sched.soc
    if np.any(s < spec.soc_min - tol) or np.any(s > spec.soc_max + tol):
        return True
    return s[-1] < spec.soc_end_lo - tol or s[-1] > spec.soc_end_hi + tol


def solve_monolithic(instance, cfg=None, degradation="rainflow"):
    cfg = cfg or MonolithicConfig()
    _check_size(instance, cfg)
    mode = cfg.mode
    if mode == "auto":
        mode = "grid" if instance.J <= 1 else "subgradient"
    if mode == "grid" and instance.J > 1:
        raise InputError("grid mode enumerates a single battery; use "
                         "subgradient mode for J > 1")
    if mode == "grid":
        return _solve_grid(instance, cfg, degradation)
    return _solve_subgradient(instance, cfg, degradation)
