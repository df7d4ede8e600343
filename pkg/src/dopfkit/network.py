"""Radial feeder model and linearized branch-flow bookkeeping.

The network is a tree rooted at the substation (node 0).  Every non-root
node owns exactly one branch -- the one connecting it to its parent -- so
branch quantities are stored in node-indexed arrays with column 0 unused
for impedances.  Branch flows follow the usual linearized DistFlow
("LinDistFlow") convention for radial feeders:

  flow into node v  =  sum over the subtree rooted at v of net consumption
  V_v               =  V_parent - (r_v * P_v + x_v * Q_v) / V0

Column 0 of a flow array carries the total net consumption of the whole
feeder, i.e. the power drawn from the transmission grid at the substation.

Everything here works in per-unit on the feeder's own base; kW enter and
leave only through the file parsers.  Flow routines are vectorized over
arbitrary leading axes (scenario, time) with the node axis last.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, StructureError


@dataclass(frozen=True)
class Branch:
    child: int
    parent: int
    r: float  # p.u.
    x: float  # p.u.


@dataclass
class CostConfig:
    """Objective weights, already converted to $ per p.u. power per interval."""

    c_loss: float
    purchase_price: np.ndarray  # scalar or per-interval vector

    def __post_init__(self):
        self.purchase_price = np.atleast_1d(np.asarray(self.purchase_price, dtype=float))
        if self.c_loss < 0 or np.any(self.purchase_price < 0):
            raise InputError("cost coefficients must be nonnegative")
        if not (np.isfinite(self.c_loss) and np.all(np.isfinite(self.purchase_price))):
            raise InputError("cost coefficients must be finite")

    def price(self, t_count):
        """Purchase price as a length-T vector, broadcasting a scalar."""
        if self.purchase_price.size == 1:
            return np.full(t_count, self.purchase_price[0])
        if self.purchase_price.size != t_count:
            raise InputError(
                f"price vector has {self.purchase_price.size} entries, horizon is {t_count}"
            )
        return self.purchase_price


class Feeder:
    """Tree topology plus impedances, voltage window, and unit base."""

    def __init__(self, n_nodes, branches, v0=1.0, epsilon=0.05,
                 s_base=1000.0, v_base=12.66):
        if n_nodes < 1:
            raise InputError("feeder needs at least the substation node")
        if v0 <= 0:
            raise InputError("substation voltage must be positive")
        if not 0 < epsilon < 1:
            raise InputError("voltage tolerance must lie in (0, 1)")
        if s_base <= 0 or v_base <= 0:
            raise InputError("unit bases must be positive")

        self.n_nodes = int(n_nodes)
        self.v0 = float(v0)
        self.epsilon = float(epsilon)
        self.s_base = float(s_base)  # kVA
        self.v_base = float(v_base)  # kV

        self.parent = np.full(self.n_nodes, -1, dtype=int)
        self.r = np.zeros(self.n_nodes)
        self.x = np.zeros(self.n_nodes)
        seen = np.zeros(self.n_nodes, dtype=bool)
        for b in branches:
            b = b if isinstance(b, Branch) else Branch(*b)
            if not 1 <= b.child < self.n_nodes:
                raise StructureError(f"branch child {b.child} out of range")
            if not 0 <= b.parent < self.n_nodes:
                raise StructureError(f"branch parent {b.parent} out of range")
            if seen[b.child]:
                raise StructureError(f"node {b.child} has two parent branches")
            if b.r < 0:
                raise InputError(f"negative resistance on branch into node {b.child}")
            seen[b.child] = True
            self.parent[b.child] = b.parent
            self.r[b.child] = b.r
            self.x[b.child] = b.x
        missing = np.nonzero(~seen[1:])[0] + 1
        if missing.size:
            raise StructureError(f"node {missing[0]} has no branch to the root")

        self.order = self._toposort()  # root first, parents before children
        self.children = [[] for _ in range(self.n_nodes)]
        for v in range(1, self.n_nodes):
            self.children[self.parent[v]].append(v)
        self._paths = None

    def _toposort(self):
        depth = np.full(self.n_nodes, -1, dtype=int)
        depth[0] = 0
        # repeated sweeps; cheap at distribution-feeder sizes and
        # leaves depth -1 exactly on nodes trapped in a parent cycle
        for _ in range(self.n_nodes):
            child_ok = (depth[self.parent[1:]] >= 0) & (depth[1:] < 0)
            if not child_ok.any():
                break
            idx = np.nonzero(child_ok)[0] + 1
            depth[idx] = depth[self.parent[idx]] + 1
        if (depth < 0).any():
            bad = int(np.nonzero(depth < 0)[0][0])
            raise StructureError(f"node {bad} is not reachable from the substation")
        return np.argsort(depth, kind="stable")

    @property
    def path_matrix(self):
        """A[v, b] = 1 iff branch b lies on the path from the root to node v."""
        if self._paths is None:
            a = np.zeros((self.n_nodes, self.n_nodes))
            for v in self.order[1:]:
                a[v] = a[self.parent[v]]
                a[v, v] = 1.0
            self._paths = a
        return self._paths

    def kw_to_pu(self, kw):
        return np.asarray(kw, dtype=float) / self.s_base

    def pu_to_kw(self, pu):
        return np.asarray(pu, dtype=float) * self.s_base


@dataclass
class FlowState:
    """Branch flows and node voltages; arrays share one (..., n_nodes) shape.

    P[..., v] (v >= 1) is the sending-end flow on the branch into node v;
    P[..., 0] is the substation draw from the transmission grid.
    """

    P: np.ndarray
    Q: np.ndarray
    V: np.ndarray

    @property
    def purchase(self):
        return self.P[..., 0]


def branch_flows(feeder, net_p, net_q):
    """Accumulate subtree sums of net consumption into branch flows."""
    p = np.array(net_p, dtype=float, copy=True)
    q = np.array(net_q, dtype=float, copy=True)
    if p.shape != q.shape or p.shape[-1] != feeder.n_nodes:
        raise InputError("injection arrays must end in one column per node")
    for v in feeder.order[:0:-1]:  # leaves first
        par = feeder.parent[v]
        p[..., par] += p[..., v]
        q[..., par] += q[..., v]
    return p, q


def voltages(feeder, p_flow, q_flow):
    v = np.empty_like(p_flow)
    v[..., 0] = feeder.v0
    drop = (feeder.r * p_flow + feeder.x * q_flow) / feeder.v0
    for n in feeder.order[1:]:
        v[..., n] = v[..., feeder.parent[n]] - drop[..., n]
    return v


def solve_lindistflow(feeder, net_p, net_q):
    """Flows and voltages for net consumption (load minus generation) per node."""
    p, q = branch_flows(feeder, net_p, net_q)
    return FlowState(P=p, Q=q, V=voltages(feeder, p, q))


def voltage_band(feeder):
    """Lower and upper limits on V/V0 -- the squared-tolerance window."""
    return (1.0 - feeder.epsilon) ** 2, (1.0 + feeder.epsilon) ** 2


def check_voltage_limits(fs, feeder):
    """Out-of-band nodes for a single flow state, as (node, magnitude) pairs."""
    v = np.atleast_1d(fs.V)
    if v.ndim != 1:
        raise InputError("check_voltage_limits expects a single (s, t) state")
    lo, hi = voltage_band(feeder)
    ratio = v / feeder.v0
    out = []
    for n in range(feeder.n_nodes):
        gap = max(lo - ratio[n], ratio[n] - hi)
        if gap > 0:
            out.append((n, float(gap)))
    return out


def _check_probabilities(pi, s_count):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (s_count,):
        raise InputError(f"{pi.size} probabilities for {s_count} scenarios")
    if abs(pi.sum() - 1.0) > 1e-6 or np.any(pi < 0):
        raise InputError("scenario probabilities must be nonnegative and sum to 1")
    return pi


def expected_losses(fs, pi, feeder, cfg):
    """Probability-weighted ohmic losses per interval and their cost.

    Expects flow arrays shaped (S, T, n_nodes).
    """
    if fs.P.ndim != 3:
        raise InputError("expected_losses wants flows stacked (S, T, nodes)")
    pi = _check_probabilities(pi, fs.P.shape[0])
    per_branch = feeder.r * (fs.P**2 + fs.Q**2) / feeder.v0**2
    per_branch[..., 0] = 0.0  # no branch into the root
    p_loss = np.einsum("s,stc->t", pi, per_branch)
    return p_loss, cfg.c_loss * p_loss


def purchase_cost(fs, pi, cfg):
    """Expected substation-purchase cost per interval."""
    if fs.P.ndim != 3:
        raise InputError("purchase_cost wants flows stacked (S, T, nodes)")
    pi = _check_probabilities(pi, fs.P.shape[0])
    expected_draw = pi @ fs.P[..., 0]
    return cfg.price(fs.P.shape[1]) * expected_draw
