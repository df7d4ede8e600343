"""Problem instance: feeder + loads + devices + scenarios + costs.

The instance owns the unit conversions between device-level kW records and
the per-unit network quantities, and precomputes the device-to-node wiring
used by both solvers.  Conventions:

  * loads are per-unit net consumption, node-indexed with column 0 = root;
  * scenario values are kW at the PV terminals (file convention);
  * battery power decisions are first-stage (one schedule across scenarios),
    inverter reactive decisions are per-scenario recourse.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import InputError
from .network import CostConfig, Feeder
from .scenarios import PvSpec, ScenarioSet
from .storage import BesSpec
from .subproblems import reactive_capacity


@dataclass
class DopfInstance:
    feeder: Feeder
    load_p: np.ndarray  # (T, n_nodes) p.u.
    load_q: np.ndarray  # (T, n_nodes) p.u.
    pv_specs: List[PvSpec]
    bes_specs: List[BesSpec]
    scenarios: ScenarioSet
    cost: CostConfig
    dt: float = 1.0  # hours

    def __post_init__(self):
        self.load_p = np.asarray(self.load_p, dtype=float)
        self.load_q = np.asarray(self.load_q, dtype=float)
        n = self.feeder.n_nodes
        if self.load_p.ndim != 2 or self.load_p.shape[1] != n:
            raise InputError("load_p must be (T, n_nodes)")
        if self.load_q.shape != self.load_p.shape:
            raise InputError("load_q must match load_p")
        if self.dt <= 0:
            raise InputError("interval length must be positive")
        if self.scenarios.T != self.T:
            raise InputError(
                f"scenario horizon {self.scenarios.T} != load horizon {self.T}")
        if self.scenarios.I != len(self.pv_specs):
            raise InputError("one scenario column per PV unit is required")
        for spec in list(self.pv_specs) + list(self.bes_specs):
            if not 1 <= spec.node < n:
                raise InputError(
                    f"device node {spec.node} is not a non-root feeder node")
        self.cost.price(self.T)  # length check up front

        self.pv_nodes = np.array([p.node for p in self.pv_specs], dtype=int)
        self.bes_nodes = np.array([b.node for b in self.bes_specs], dtype=int)
        s_w = np.array([p.s_w for p in self.pv_specs])
        w_kw = self.scenarios.values
        if w_kw.size and np.any(w_kw > s_w * (1 + 1e-9)):
            raise InputError("a scenario exceeds its inverter rating")
        self.pv_power_pu = self.feeder.kw_to_pu(w_kw)  # (S, T, I)
        self.q_max_pu = self.feeder.kw_to_pu(
            reactive_capacity(np.broadcast_to(s_w, w_kw.shape), w_kw))

    @property
    def S(self):
        return self.scenarios.S

    @property
    def T(self):
        return self.load_p.shape[0]

    @property
    def I(self):
        return len(self.pv_specs)

    @property
    def J(self):
        return len(self.bes_specs)

    def scatter_to_nodes(self, per_device, nodes):
        """Sum per-device (..., n_dev) values into node columns (..., n_nodes)."""
        out = np.zeros(per_device.shape[:-1] + (self.feeder.n_nodes,))
        for k, node in enumerate(nodes):
            out[..., node] += per_device[..., k]
        return out

    def bes_multiplier_profile(self, lam_p, j):
        """Scenario-summed nodal price for battery j, converted to $/kW."""
        return lam_p[:, :, self.bes_specs[j].node].sum(axis=0) / self.feeder.s_base
