"""Rainflow cycle counting and cycle-depth degradation costing for battery SoC profiles.

A state-of-charge profile is reduced to its turning points, nested excursions
are paired into full cycles by the four-point rule, and whatever remains is
kept as half cycles.  Every full cycle is reported as one charge half cycle
plus one discharge half cycle of equal depth, so the charge/discharge depth
multisets carry the complete count.  Life consumption of a single half cycle
of depth d is the polynomial stress k1 * d**k2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# one half cycle, index-tagged: (depth, index of start turning point,
# index of end turning point, +1 charge / -1 discharge)
_CHARGE = 1
_DISCHARGE = -1


@dataclass
class StressModel:
    """Polynomial cycle-depth stress curve: a half cycle of depth d costs k1 * d**k2."""

    k1: float = 4.5e-4
    k2: float = 2.2

    def __post_init__(self):
        if not (np.isfinite(self.k1) and np.isfinite(self.k2)):
            raise InputError("stress coefficients must be finite")
        if self.k1 <= 0:
            raise InputError(f"k1 must be positive, got {self.k1}")
        if self.k2 < 1.0:
            raise InputError(f"k2 must be >= 1, got {self.k2}")


@dataclass
class HalfCycleSet:
    """Charge/discharge half-cycle depth multisets extracted from one profile."""

    charge_depths: np.ndarray   # depths in (0, 1], ascending not guaranteed
    discharge_depths: np.ndarray

    def total_charge(self) -> float:
        return float(np.sum(self.charge_depths))

    def total_discharge(self) -> float:
        return float(np.sum(self.discharge_depths))


def _as_profile(profile) -> np.ndarray:
    soc = np.asarray(profile, dtype=float)
    if soc.ndim != 1 or soc.size < 1:
        raise InputError("SoC profile must be a 1-D sequence with at least one sample")
    if not np.all(np.isfinite(soc)):
        raise InputError("SoC profile contains non-finite values")
    if np.any(soc < -1e-12) or np.any(soc > 1.0 + 1e-12):
        bad = soc[(soc < -1e-12) | (soc > 1.0 + 1e-12)][0]
        raise InputError(f"SoC profile value {bad} outside [0, 1]")
    return np.clip(soc, 0.0, 1.0)


def _turning_points(soc: np.ndarray):
    """Indices of the alternating extrema of the profile, flats collapsed.

    Returns (values, indices); a flat run is represented by its first sample.
    """
    # collapse exact repeats first so direction tests below are strict
    keep = np.concatenate(([True], np.diff(soc) != 0.0))
    vals = soc[keep]
    idx = np.nonzero(keep)[0]
    if vals.size <= 2:
        return vals, idx
    d = np.diff(vals)
    interior = d[:-1] * d[1:] < 0.0          # strict sign change -> extremum
    mask = np.concatenate(([True], interior, [True]))
    return vals[mask], idx[mask]


def _extract_half_cycles(vals: np.ndarray, idx: np.ndarray):
    """Four-point rainflow pass over a turning-point sequence.

    Streams turning points through a stack; whenever the innermost range of
    the last four points is bounded by both neighbouring ranges, that inner
    excursion is a full cycle and its two points leave the stack.  The stack
    that survives the sweep is the residual and is counted as half cycles.
    Returns a list of (depth, start_idx, end_idx, sign) half cycles where
    full cycles contribute one charge and one discharge entry each.
    """
    halves = []
    sv: list[float] = []   # stacked turning values
    si: list[int] = []     # their profile indices
    for v, i in zip(vals, idx):
        sv.append(float(v))
        si.append(int(i))
        while len(sv) >= 4:
            inner = abs(sv[-2] - sv[-3])
            if inner <= abs(sv[-3] - sv[-4]) and inner <= abs(sv[-1] - sv[-2]):
                b, c = sv[-3], sv[-2]
                ib, ic = si[-3], si[-2]
                lo, hi = (ib, ic) if b <= c else (ic, ib)
                halves.append((inner, lo, hi, _CHARGE))
                halves.append((inner, hi, lo, _DISCHARGE))
                del sv[-3:-1]
                del si[-3:-1]
            else:
                break
    for k in range(len(sv) - 1):
        depth = abs(sv[k + 1] - sv[k])
        if sv[k + 1] > sv[k]:
            halves.append((depth, si[k], si[k + 1], _CHARGE))
        else:
            halves.append((depth, si[k], si[k + 1], _DISCHARGE))
    return halves


def count_half_cycles(profile) -> HalfCycleSet:
    """Count rainflow half cycles of a SoC profile (values in [0, 1])."""
    soc = _as_profile(profile)
    vals, idx = _turning_points(soc)
    halves = _extract_half_cycles(vals, idx)
    ch = np.array([h[0] for h in halves if h[3] == _CHARGE], dtype=float)
    dis = np.array([h[0] for h in halves if h[3] == _DISCHARGE], dtype=float)
    return HalfCycleSet(charge_depths=ch, discharge_depths=dis)


def stress(depth, model: StressModel) -> float:
    """Life consumed by one half cycle of the given depth, k1 * depth**k2."""
    d = np.asarray(depth, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InputError("cycle depth must be finite and non-negative")
    return model.k1 * d**model.k2


def stress_sum(profile, model: StressModel) -> float:
    """Total stress of all half cycles of the profile (dimensionless life fraction)."""
    hc = count_half_cycles(profile)
    total = 0.0
    if hc.charge_depths.size:
        total += float(np.sum(stress(hc.charge_depths, model)))
    if hc.discharge_depths.size:
        total += float(np.sum(stress(hc.discharge_depths, model)))
    return total


def degradation_cost(profile, model: StressModel, c_bes: float, e_cap: float) -> float:
    """Dollar cost of the cycling in `profile` for a battery of e_cap kWh.

    The stress sum is scaled by the unit replacement cost c_bes ($/kWh) and by
    the capacity so the result is in dollars for the whole battery.
    """
    if c_bes < 0 or e_cap <= 0:
        raise InputError("c_bes must be >= 0 and e_cap > 0")
    return c_bes * e_cap * stress_sum(profile, model)


def degradation_subgradient(profile, model: StressModel) -> np.ndarray:
    """Sensitivity of the stress sum to each SoC sample.

    Returns g with g[t] = d(stress_sum)/d(SoC_t) under the current cycle
    decomposition.  Away from decomposition kinks this is the gradient;
    at a kink it is the one-sided derivative of the decomposition in force.
    Multiply by c_bes * e_cap for the cost sensitivity.
    """
    soc = _as_profile(profile)
    vals, idx = _turning_points(soc)
    halves = _extract_half_cycles(vals, idx)
    g = np.zeros_like(soc)
    k1, k2 = model.k1, model.k2
    for depth, ia, ib, _sign in halves:
        # d(depth)/d(soc) is +1 at the higher endpoint, -1 at the lower one
        dphi = k1 * k2 * depth ** (k2 - 1.0) if depth > 0.0 or k2 == 1.0 else 0.0
        hi, lo = (ia, ib) if soc[ia] >= soc[ib] else (ib, ia)
        g[hi] += dphi
        g[lo] -= dphi
    return g
