"""Multiplier master loop coordinating the decomposed subproblems.

The nodal power balances are relaxed into the objective with one pair of
multipliers per (scenario, interval, node).  Each master iteration solves
every subproblem at the current prices, assembles the dual value, walks the
multipliers along the balance residuals, and stops when the residual's
infinity norm drops under `rho`.  Root-node multipliers stay fixed at zero:
the substation balance defines the purchase power instead of being priced.

The residual convention, spelled out once:

  d_lam_p[s,t,v] = P[s,t,v] - load_p[t,v] + pv[s,t,at v] + bes_injection[t,at v]
                   - sum of P[s,t,c] over children c of v

and the reactive analogue with the inverter q.  A positive residual means
surplus power flows into node v, which *raises* its price lam_p -- the
ascent direction for the concave dual.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dispatch import (
    DispatchSchedule,
    bes_injection_pu,
    evaluate_objective,
    worst_voltage_gap,
)
from .errors import InputError
from .storage import BesSolverConfig, solve_bes_subproblem
from .subproblems import NodePowerSolver, QpConfig, solve_dre_subproblem


@dataclass
class Multipliers:
    lam_p: np.ndarray  # (S, T, n_nodes); column 0 identically zero
    lam_q: np.ndarray

    @classmethod
    def zeros(cls, instance):
        shape = (instance.S, instance.T, instance.feeder.n_nodes)
        return cls(lam_p=np.zeros(shape), lam_q=np.zeros(shape))

    @classmethod
    def price_propagated(cls, instance):
        """Every node priced at the grid energy price.

        At this point the flow subproblem's linear coefficients vanish, so
        the master starts from the uniform-marginal-price solution and only
        has to learn the loss/congestion corrections, which are small.
        """
        mu = cls.zeros(instance)
        pi = instance.scenarios.probabilities
        price = instance.cost.price(instance.T)
        mu.lam_p[:, :, 1:] = -(pi[:, None] * price[None, :])[:, :, None]
        return mu

    def copy(self):
        return Multipliers(lam_p=self.lam_p.copy(), lam_q=self.lam_q.copy())


@dataclass
class DualSolutions:
    q_pv: np.ndarray          # (S, T, I) p.u.
    bes: list                 # BesSchedule per battery
    P: np.ndarray             # (S, T, n_nodes) flows; column 0 = root draw
    Q: np.ndarray
    value_dre: float
    value_bes: float
    value_np: float


@dataclass
class DualIterate:
    iteration: int
    dual_value: float
    inf_norm: float
    wall_time: float  # seconds since the master started


@dataclass
class CoordinatorConfig:
    rho: float = 1e-3          # p.u. residual tolerance
    gamma: Optional[float] = None  # None: 0.1 / (1 + first residual norm)
    max_iterations: int = 500
    step_rule: str = "constant"    # or "diminishing" (gamma / sqrt(k))
    init: str = "price"            # or "zero"
    threads: int = 1
    bes_cfg: BesSolverConfig = field(default_factory=BesSolverConfig)
    qp_cfg: QpConfig = field(default_factory=QpConfig)

    def __post_init__(self):
        if self.rho <= 0:
            raise InputError("rho must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise InputError("gamma must be positive")
        if self.max_iterations < 1:
            raise InputError("at least one master iteration is required")
        if self.step_rule not in ("constant", "diminishing"):
            raise InputError(f"unknown step rule '{self.step_rule}'")
        if self.init not in ("price", "zero"):
            raise InputError(f"unknown initialization '{self.init}'")
        if self.threads < 1:
            raise InputError("threads must be >= 1")


@dataclass
class MasterResult:
    schedule: DispatchSchedule
    trace: List[DualIterate]
    reason: str                # "converged" | "iteration limit"
    dual_value: float          # best dual value seen
    primal_value: float
    worst_violation: float     # voltage-band gap of the recovered schedule
    subproblems_per_iteration: int

    @property
    def iterations(self):
        return len(self.trace)


def evaluate_dual(mu, instance, np_solver, cfg=None, degradation="rainflow"):
    """Solve every subproblem at prices mu; return (dual value, solutions)."""
    cfg = cfg or CoordinatorConfig()
    pi = instance.scenarios.probabilities
    price = instance.cost.price(instance.T)

    # inverter reactive dispatch: closed form over all (s, t, i) at once
    if instance.I:
        lam_q_pv = mu.lam_q[:, :, instance.pv_nodes]
        lam_p_pv = mu.lam_p[:, :, instance.pv_nodes]
        q_pv, contrib = solve_dre_subproblem(lam_q_pv, instance.q_max_pu)
        value_dre = float(contrib.sum() + (lam_p_pv * instance.pv_power_pu).sum())
    else:
        q_pv = np.zeros((instance.S, instance.T, 0))
        value_dre = 0.0

    bes, value_bes = [], 0.0
    for j, spec in enumerate(instance.bes_specs):
        lam_kw = instance.bes_multiplier_profile(mu.lam_p, j)
        sched, val = solve_bes_subproblem(spec, lam_kw, instance.dt,
                                          cfg.bes_cfg, degradation=degradation)
        bes.append(sched)
        value_bes += val

    shape = (instance.S, instance.T, instance.feeder.n_nodes)
    p_flow = np.empty(shape)
    q_flow = np.empty(shape)
    vals_np = np.empty((instance.S, instance.T))

    def solve_cell(s, t):
        res = np_solver.solve(mu.lam_p[s, t], mu.lam_q[s, t],
                              instance.load_p[t], instance.load_q[t],
                              pi[s], price[t], instance.cost.c_loss)
        p_flow[s, t] = res.P
        q_flow[s, t] = res.Q
        vals_np[s, t] = res.objective

    cells = [(s, t) for s in range(instance.S) for t in range(instance.T)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            list(pool.map(lambda st: solve_cell(*st), cells))
    else:
        for s, t in cells:
            solve_cell(s, t)
    value_np = float(vals_np.sum())

    sols = DualSolutions(q_pv=q_pv, bes=bes, P=p_flow, Q=q_flow,
                         value_dre=value_dre, value_bes=value_bes, value_np=value_np)
    return value_dre + value_bes + value_np, sols


def compute_subgradient(solutions, instance):
    """Balance residuals of the (mutually inconsistent) subproblem solutions."""
    d_p = solutions.P.copy()
    d_q = solutions.Q.copy()
    d_p -= instance.load_p[None, :, :]
    d_q -= instance.load_q[None, :, :]
    d_p += instance.scatter_to_nodes(instance.pv_power_pu, instance.pv_nodes)
    d_q += instance.scatter_to_nodes(np.asarray(solutions.q_pv), instance.pv_nodes)
    d_p += bes_injection_pu(instance, solutions.bes)[None, :, :]
    parent = instance.feeder.parent
    for v in range(1, instance.feeder.n_nodes):
        d_p[..., parent[v]] -= solutions.P[..., v]
        d_q[..., parent[v]] -= solutions.Q[..., v]
    d_p[..., 0] = 0.0  # the root balance is not priced
    d_q[..., 0] = 0.0
    return d_p, d_q


def subproblem_count(instance):
    """Independent solves per master iteration."""
    return instance.S * instance.T * instance.I + instance.J \
        + instance.S * instance.T


def recover_primal(solutions, instance):
    """Fix device decisions, re-solve flows exactly, report the damage."""
    schedule = DispatchSchedule(q_pv=np.asarray(solutions.q_pv).copy(),
                                bes=solutions.bes)
    total, _ = evaluate_objective(instance, schedule)
    gap = worst_voltage_gap(instance.feeder, schedule.flows.V)
    return schedule, total, gap


def _default_gamma(instance, inf_norm):
    """Step size matched to the dual curvature.

    The flow subproblems give the dual a quadratic part whose curvature per
    multiplier is about 1/(2 d) with d = c_loss * pi * r / v0^2, so steps on
    the scale of the smallest d converge without ringing; 0.5 covers the
    extra spectral factor from nodes with several children.
    """
    feeder = instance.feeder
    r_pos = feeder.r[1:]
    r_pos = r_pos[r_pos > 0]
    pi_min = float(instance.scenarios.probabilities.min())
    if instance.cost.c_loss > 0 and r_pos.size:
        return 0.5 * instance.cost.c_loss * pi_min * float(r_pos.min()) \
            / feeder.v0**2
    return 0.1 / (1.0 + inf_norm)


def run_master(instance, cfg=None, degradation="rainflow"):
    cfg = cfg or CoordinatorConfig()
    np_solver = NodePowerSolver(instance.feeder, cfg.qp_cfg)
    mu = Multipliers.price_propagated(instance) if cfg.init == "price" \
        else Multipliers.zeros(instance)
    trace: List[DualIterate] = []
    best_value, best_sols = -np.inf, None
    gamma = cfg.gamma
    reason = "iteration limit"
    t0 = time.perf_counter()

    for k in range(1, cfg.max_iterations + 1):
        value, sols = evaluate_dual(mu, instance, np_solver, cfg, degradation)
        d_p, d_q = compute_subgradient(sols, instance)
        inf_norm = max(float(np.abs(d_p).max(initial=0.0)),
                       float(np.abs(d_q).max(initial=0.0)))
        trace.append(DualIterate(k, float(value), inf_norm,
                                 time.perf_counter() - t0))
        if value > best_value:
            best_value, best_sols = value, sols
        if inf_norm < cfg.rho:
            reason = "converged"
            break
        if gamma is None:
            gamma = _default_gamma(instance, inf_norm)
        step = gamma if cfg.step_rule == "constant" else gamma / np.sqrt(k)
        mu.lam_p += step * d_p
        mu.lam_q += step * d_q

    schedule, primal_value, worst_gap = recover_primal(best_sols, instance)
    return MasterResult(
        schedule=schedule,
        trace=trace,
        reason=reason,
        dual_value=float(best_value),
        primal_value=float(primal_value),
        worst_violation=float(worst_gap),
        subproblems_per_iteration=subproblem_count(instance),
    )


def write_trace(trace, path):
    with open(path, "w") as fh:
        fh.write("iteration,dual_value,inf_norm,wall_time\n")
        for row in trace:
            fh.write(f"{row.iteration},{row.dual_value:.12g},"
                     f"{row.inf_norm:.12g},{row.wall_time:.6f}\n")
