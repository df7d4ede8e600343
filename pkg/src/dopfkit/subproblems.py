"""Per-device and per-(scenario, interval) pieces of the relaxed problem.

Two subproblem families live here.  The inverter reactive dispatch is a
one-variable linear program with a closed-form vertex solution.  The
"node power" piece is a small strictly convex QP in the branch flows of
one (s, t): ohmic-loss quadratics plus multiplier-difference linear terms,
with the voltage recursion eliminated by substitution so the voltage band
becomes 2N halfspaces.  When the unconstrained minimizer already sits
inside the band it is returned directly; otherwise a projected gradient
ascent on the QP dual (fixed 1/L step) finds the active set.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .network import voltages

__all__ = [
    "reactive_capacity",
    "solve_dre_subproblem",
    "QpConfig",
    "NodePowerResult",
    "NodePowerSolver",
]


def reactive_capacity(s_w, w_a):
    """Reactive headroom sqrt(s_w^2 - w_a^2) of an inverter at output w_a."""
    s_w = np.asarray(s_w, dtype=float)
    w_a = np.asarray(w_a, dtype=float)
    if np.any(w_a < 0) or np.any(s_w < 0):
        raise InputError("inverter ratings and outputs must be nonnegative")
    if np.any(w_a > s_w * (1 + 1e-12)):
        raise InputError("active output exceeds the inverter rating")
    return np.sqrt(np.maximum(s_w**2 - w_a**2, 0.0))


def solve_dre_subproblem(lam_q, q_max):
    """min lam_q * q over |q| <= q_max: a vertex, with q = 0 breaking ties."""
    lam_q = np.asarray(lam_q, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if np.any(q_max < 0):
        raise InputError("reactive capacity must be nonnegative")
    q = -np.sign(lam_q) * q_max
    return q, lam_q * q


@dataclass
class QpConfig:
    max_iterations: int = 20000
    tol: float = 1e-8  # KKT feasibility/complementarity residual


@dataclass
class NodePowerResult:
    P: np.ndarray  # (n_nodes,), column 0 = substation draw
    Q: np.ndarray
    V: np.ndarray
    objective: float  # includes the multiplier-load and root-load constants
    iterations: int


class NodePowerSolver:
    """Caches the feeder-dependent matrices shared by every (s, t) solve."""

    def __init__(self, feeder, cfg=None):
        self.feeder = feeder
        self.cfg = cfg or QpConfig()
        n = feeder.n_nodes - 1  # branch count
        self.n_branches = n
        a = feeder.path_matrix[1:, 1:]  # (n, n)
        # halfspace rows: sum over path of (r P + x Q) per node
        self.h = np.hstack([a * feeder.r[1:], a * feeder.x[1:]])  # (n, 2n)
        lo_ratio, hi_ratio = (1 - feeder.epsilon) ** 2, (1 + feeder.epsilon) ** 2
        v0 = feeder.v0
        self.s_hi = np.full(n, v0**2 * (1 - lo_ratio))
        self.s_lo = np.full(n, v0**2 * (1 - hi_ratio))
        self.root_children = feeder.parent[1:] == 0  # mask over branches
        self.d_base = np.concatenate([feeder.r[1:], feeder.r[1:]]) / v0**2
        if np.all(feeder.r[1:] > 0):
            b = (self.h / (2.0 * self.d_base)) @ self.h.T
            self._l0 = float(np.linalg.eigvalsh(b)[-1])
        else:
            self._l0 = None  # constrained path needs strict convexity

    def solve(self, lam_p, lam_q, load_p, load_q, pi_s, price_t, c_loss):
        """One (s, t) solve; multipliers and loads are node-indexed (col 0 root)."""
        f = self.feeder
        n = self.n_branches
        lam_p = np.asarray(lam_p, dtype=float)
        lam_q = np.asarray(lam_q, dtype=float)
        if lam_p.shape != (f.n_nodes,) or lam_q.shape != (f.n_nodes,):
            raise InputError("multiplier vectors must have one entry per node")
        if lam_p[0] != 0.0 or lam_q[0] != 0.0:
            raise InputError("root multipliers are fixed to zero by convention")
        if pi_s <= 0 or c_loss < 0:
            raise InputError("need pi_s > 0 and c_loss >= 0")

        par = f.parent[1:]
        a_lin = lam_p[1:] - lam_p[par]
        a_lin = a_lin + np.where(self.root_children, pi_s * price_t, 0.0)
        b_lin = lam_q[1:] - lam_q[par]
        c = np.concatenate([a_lin, b_lin])
        d = c_loss * pi_s * self.d_base

        const = (
            -float(lam_p[1:] @ load_p[1:]) - float(lam_q[1:] @ load_q[1:])
            + pi_s * price_t * float(load_p[0])
        )

        if np.any(d <= 0):
            # linear objective: bounded only when every coefficient vanishes
            if np.any(np.abs(c[d <= 0]) > 0):
                raise NumericalError(
                    "node-power subproblem needs r > 0 and c_loss > 0 on every "
                    "branch carrying a nonzero multiplier difference")
            x = np.zeros(2 * n)
            x[d > 0] = -c[d > 0] / (2.0 * d[d > 0])
            iters = 0
        else:
            x = -c / (2.0 * d)
            s = self.h @ x
            iters = 0
            if np.any(s > self.s_hi + self.cfg.tol) or np.any(s < self.s_lo - self.cfg.tol):
                x, iters = self._solve_constrained(c, d)

        p_flow = np.concatenate([[0.0], x[:n]])
        q_flow = np.concatenate([[0.0], x[n:]])
        p_flow[0] = load_p[0] + x[:n][self.root_children].sum()
        q_flow[0] = load_q[0] + x[n:][self.root_children].sum()
        v = voltages(f, p_flow, q_flow)
        obj = float(d @ x**2 + c @ x + const)
        return NodePowerResult(P=p_flow, Q=q_flow, V=v, objective=obj, iterations=iters)

    def _solve_constrained(self, c, d):
        if self._l0 is None:
            raise NumericalError(
                "voltage band is active but a zero-resistance branch makes the "
                "flow QP non-strictly-convex; cannot project")
        # d = scale * d_base for a single scalar scale, so the stacked dual
        # gradient is (2 * l0 / scale)-Lipschitz
        scale = d[0] / self.d_base[0]
        step = scale / (2.0 * self._l0)
        nu = np.zeros(2 * self.n_branches)   # stacked (hi, lo) band prices
        z = nu.copy()                        # extrapolated point
        t_k = 1.0
        tol = self.cfg.tol
        n = self.n_branches
        for k in range(1, self.cfg.max_iterations + 1):
            x = -(c + self.h.T @ (z[:n] - z[n:])) / (2.0 * d)
            s = self.h @ x
            g = np.concatenate([s - self.s_hi, self.s_lo - s])
            nu_new = np.maximum(z + step * g, 0.0)

            x = -(c + self.h.T @ (nu_new[:n] - nu_new[n:])) / (2.0 * d)
            s = self.h @ x
            g_hi = s - self.s_hi
            g_lo = self.s_lo - s
            viol = max(g_hi.max(initial=0.0), g_lo.max(initial=0.0))
            comp = max(
                np.max(nu_new[:n] * np.maximum(-g_hi, 0.0), initial=0.0),
                np.max(nu_new[n:] * np.maximum(-g_lo, 0.0), initial=0.0),
            )
            if viol < tol and comp < tol:
                return x, k

            # Nesterov extrapolation with a gradient-sign restart
            if g @ (nu_new - nu) < 0.0:
                t_k, z = 1.0, nu_new
            else:
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
                z = nu_new + (t_k - 1.0) / t_next * (nu_new - nu)
                t_k = t_next
            nu = nu_new
        raise NumericalError(
            f"flow QP dual ascent missed tol={tol} in {self.cfg.max_iterations} iterations")
