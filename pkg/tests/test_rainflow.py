"""Cycle counting tests.

The reference counter below re-derives the four-point rule from scratch with
a rescan-until-fixpoint loop instead of the streaming stack used by the
package, so agreement between the two is a real cross-check.
"""

import numpy as np
import pytest

from dopfkit.errors import InputError
from dopfkit.rainflow import (
    HalfCycleSet,
    StressModel,
    count_half_cycles,
    degradation_cost,
    degradation_subgradient,
    stress,
    stress_sum,
)

M = StressModel()  # k1=4.5e-4, k2=2.2 defaults


# --------------------------------------------------------------------------
# independent reference implementation (oracle)
# --------------------------------------------------------------------------

def _ref_turning_points(values):
    pts = [values[0]]
    for v in values[1:]:
        if v != pts[-1]:
            pts.append(v)
    out = [pts[0]]
    for k in range(1, len(pts) - 1):
        if (pts[k] - pts[k - 1]) * (pts[k + 1] - pts[k]) < 0:
            out.append(pts[k])
    if len(pts) > 1:
        out.append(pts[-1])
    return out


def reference_half_cycles(values):
    """Four-point rainflow by repeated left-to-right rescans (quadratic, simple)."""
    tp = _ref_turning_points(list(map(float, values)))
    charge, discharge = [], []
    changed = True
    while changed:
        changed = False
        for k in range(len(tp) - 3):
            a, b, c, d = tp[k], tp[k + 1], tp[k + 2], tp[k + 3]
            inner = abs(c - b)
            if inner <= abs(b - a) and inner <= abs(d - c):
                charge.append(inner)
                discharge.append(inner)
                del tp[k + 1:k + 3]
                changed = True
                break
    for k in range(len(tp) - 1):
        depth = abs(tp[k + 1] - tp[k])
        (charge if tp[k + 1] > tp[k] else discharge).append(depth)
    return sorted(charge), sorted(discharge)


def _multisets(hc: HalfCycleSet):
    return sorted(hc.charge_depths.tolist()), sorted(hc.discharge_depths.tolist())


# --------------------------------------------------------------------------
# pinned hand cases
# --------------------------------------------------------------------------

def test_nested_cycle_example():
    hc = count_half_cycles([0.6, 0.4, 0.8, 0.5])
    ch, dis = _multisets(hc)
    assert ch == pytest.approx([0.4])
    assert dis == pytest.approx([0.2, 0.3])


def test_monotone_ramp_is_single_half_cycle():
    hc = count_half_cycles([0.3, 0.5, 0.8])
    ch, dis = _multisets(hc)
    assert ch == pytest.approx([0.5])
    assert dis == []


def test_constant_profile_has_no_cycles():
    hc = count_half_cycles([0.6, 0.6, 0.6])
    assert hc.charge_depths.size == 0
    assert hc.discharge_depths.size == 0


def test_full_cycle_extraction_with_residual():
    # inner excursion 0.4 -> 0.6 closes as a full cycle, outer sweep remains
    hc = count_half_cycles([0.2, 0.8, 0.4, 0.6, 0.1])
    ch, dis = _multisets(hc)
    assert ch == pytest.approx([0.2, 0.6])
    assert dis == pytest.approx([0.2, 0.7])


def test_profile_validation():
    with pytest.raises(InputError):
        count_half_cycles([0.2, 1.4])
    with pytest.raises(InputError):
        count_half_cycles([0.2, -0.1])
    with pytest.raises(InputError):
        count_half_cycles([])
    with pytest.raises(InputError):
        count_half_cycles([0.2, np.nan])


# --------------------------------------------------------------------------
# oracle equivalence + conservation properties
# --------------------------------------------------------------------------

def test_matches_reference_on_random_profiles():
    rng = np.random.default_rng(7122)
    for _ in range(400):
        n = int(rng.integers(1, 26))
        soc = rng.uniform(0.0, 1.0, size=n)
        got = _multisets(count_half_cycles(soc))
        want = reference_half_cycles(soc)
        assert got[0] == pytest.approx(want[0], abs=0.0)
        assert got[1] == pytest.approx(want[1], abs=0.0)


def test_matches_reference_on_gridded_profiles_with_ties():
    # quantized values force exact ties in the four-point comparisons
    rng = np.random.default_rng(8)
    for _ in range(300):
        n = int(rng.integers(2, 20))
        soc = rng.integers(0, 6, size=n) / 5.0
        got = _multisets(count_half_cycles(soc))
        want = reference_half_cycles(soc)
        assert got == want


def test_direction_conservation():
    rng = np.random.default_rng(99)
    for _ in range(200):
        soc = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 30)))
        hc = count_half_cycles(soc)
        rises = float(np.sum(np.clip(np.diff(soc), 0, None)))
        falls = float(np.sum(np.clip(-np.diff(soc), 0, None)))
        assert hc.total_charge() == pytest.approx(rises, abs=1e-12)
        assert hc.total_discharge() == pytest.approx(falls, abs=1e-12)


def test_time_reversal_swaps_charge_and_discharge():
    rng = np.random.default_rng(4242)
    for _ in range(200):
        soc = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 30)))
        fwd = count_half_cycles(soc)
        rev = count_half_cycles(soc[::-1])
        assert sorted(fwd.charge_depths) == pytest.approx(sorted(rev.discharge_depths))
        assert sorted(fwd.discharge_depths) == pytest.approx(sorted(rev.charge_depths))


def test_depths_positive_and_bounded():
    rng = np.random.default_rng(17)
    for _ in range(100):
        soc = rng.uniform(0.0, 1.0, size=12)
        hc = count_half_cycles(soc)
        for d in np.concatenate([hc.charge_depths, hc.discharge_depths]):
            assert 0.0 < d <= 1.0


# --------------------------------------------------------------------------
# stress and cost
# --------------------------------------------------------------------------

def test_stress_value():
    assert stress(0.5, M) == pytest.approx(4.5e-4 * 0.5**2.2, rel=1e-12)
    assert stress(0.5, M) == pytest.approx(9.7937e-5, rel=1e-3)
    assert stress(0.0, M) == 0.0


def test_stress_rejects_negative_depth():
    with pytest.raises(InputError):
        stress(-0.1, M)


def test_stress_model_validation():
    with pytest.raises(InputError):
        StressModel(k1=-1.0)
    with pytest.raises(InputError):
        StressModel(k2=0.5)
    with pytest.raises(InputError):
        StressModel(k1=np.inf)


def test_symmetric_cycle_cost():
    # one symmetric full cycle of depth 0.5 on a 75 kWh unit at 150 $/kWh
    cost = degradation_cost([0.3, 0.8, 0.3], M, c_bes=150.0, e_cap=75.0)
    assert cost == pytest.approx(150.0 * 75.0 * 2.0 * 4.5e-4 * 0.5**2.2, rel=1e-12)
    assert cost == pytest.approx(2.2036, rel=1e-3)


def test_flat_profile_costs_nothing():
    assert degradation_cost([0.6] * 10, M, 150.0, 75.0) == 0.0


def test_inserting_extra_cycle_never_cheaper():
    rng = np.random.default_rng(5150)
    for _ in range(100):
        soc = rng.uniform(0.2, 0.8, size=10)
        base = stress_sum(soc, M)
        k = int(rng.integers(1, 9))
        bump = float(rng.uniform(0.05, 0.15))
        widened = np.concatenate([soc[:k], [soc[k - 1], soc[k - 1] + bump, soc[k - 1]], soc[k:]])
        assert stress_sum(widened, M) >= base - 1e-12


def test_deeper_single_cycle_costs_more():
    shallower = stress_sum([0.5, 0.7, 0.5], M)
    deeper = stress_sum([0.5, 0.9, 0.5], M)
    assert deeper > shallower


def test_convexity_spot_check():
    rng = np.random.default_rng(31337)
    for _ in range(100):
        x = rng.uniform(0.0, 1.0, size=14)
        y = rng.uniform(0.0, 1.0, size=14)
        mid = stress_sum(0.5 * (x + y), M)
        assert mid <= 0.5 * (stress_sum(x, M) + stress_sum(y, M)) + 1e-9


# --------------------------------------------------------------------------
# subgradient vs central differences
# --------------------------------------------------------------------------

def _decomposition_signature(soc):
    hc = count_half_cycles(soc)
    return (np.round(np.sort(hc.charge_depths), 9).tolist(),
            np.round(np.sort(hc.discharge_depths), 9).tolist())


def test_subgradient_matches_central_differences():
    rng = np.random.default_rng(2024)
    h = 1e-6
    checked = 0
    while checked < 100:
        soc = rng.uniform(0.05, 0.95, size=int(rng.integers(4, 16)))
        t = int(rng.integers(0, soc.size))
        up, dn = soc.copy(), soc.copy()
        up[t] += h
        dn[t] -= h
        # skip kinks: the cycle decomposition must be stable across the stencil
        wide_up, wide_dn = soc.copy(), soc.copy()
        wide_up[t] += 10 * h
        wide_dn[t] -= 10 * h
        ref = degradation_subgradient(soc, M)[t]
        fd = (stress_sum(up, M) - stress_sum(dn, M)) / (2 * h)
        stable = (
            len(_decomposition_signature(wide_up)[0]) == len(_decomposition_signature(wide_dn)[0])
            and abs((stress_sum(wide_up, M) - stress_sum(soc, M)) / (10 * h)
                    - (stress_sum(soc, M) - stress_sum(wide_dn, M)) / (10 * h)) < 1e-5
        )
        if not stable:
            continue
        checked += 1
        if abs(ref) < 1e-12 and abs(fd) < 1e-9:
            continue
        assert fd == pytest.approx(ref, rel=1e-4), f"profile={soc!r} t={t}"


def test_subgradient_endpoint_sensitivity():
    # single ramp 0.3 -> 0.8: only the endpoints move the depth
    g = degradation_subgradient([0.3, 0.55, 0.8], M)
    dphi = M.k1 * M.k2 * 0.5 ** (M.k2 - 1.0)
    assert g[0] == pytest.approx(-dphi, rel=1e-12)
    assert g[1] == 0.0
    assert g[2] == pytest.approx(dphi, rel=1e-12)


def test_subgradient_interior_of_monotone_run_is_zero():
    g = degradation_subgradient([0.1, 0.2, 0.3, 0.4, 0.9, 0.5], M)
    assert g[1] == 0.0 and g[2] == 0.0 and g[3] == 0.0
