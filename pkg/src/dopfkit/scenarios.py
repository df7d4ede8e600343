"""Forecast-conditioned PV scenario generation.

Each PV unit's actual output for an interval is modelled by a Beta
distribution whose mean equals the normalized forecast and whose standard
deviation grows affinely with the forecast level.  Cross-unit dependence is
captured by a Gaussian copula estimated from normal scores of a history of
(actual, forecast) records; sampling conditions the actual-power block on the
forecast block of the score correlation.  The conditional Gaussian is
re-standardized component-wise before the inverse-CDF map so that every
sampled unit keeps exactly its fitted Beta marginal, and the conditioning
survives as the residual cross-unit correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaincinv, ndtr, ndtri
from scipy.stats import rankdata

from .errors import (
    DegenerateColumnError,
    DegenerateMarginalError,
    InputError,
    NumericalError,
)

# slope/offset of the normalized forecast -> standard deviation relation
SIGMA_SLOPE = 0.2
SIGMA_OFFSET = 0.21
# smallest Beta shape parameter allowed when the moment system is infeasible
ALPHA_MIN = 0.05
# eigenvalue floor used when repairing an indefinite score correlation
EIG_FLOOR = 1e-10


@dataclass
class PvSpec:
    """One PV unit: apparent capacity s_w [kVA], max active output w_max [kW]."""

    node: int
    s_w: float           # inverter apparent capacity [kVA]
    w_max: float = None  # max active power [kW]; defaults to s_w / 1.1

    def __post_init__(self):
        if not np.isfinite(self.s_w) or self.s_w <= 0:
            raise InputError(f"pv at node {self.node}: s_w must be positive, got {self.s_w}")
        if self.w_max is None:
            self.w_max = self.s_w / 1.1
        elif abs(self.w_max - self.s_w / 1.1) > 1e-12 * max(1.0, abs(self.w_max)):
            raise InputError(
                f"pv at node {self.node}: w_max {self.w_max} != s_w/1.1 = {self.s_w / 1.1}"
            )


@dataclass
class BetaMarginal:
    """Beta distribution of one unit's actual power on [0, w_max] kW."""

    w_max: float
    alpha: float
    beta: float
    mu_norm: float       # normalized mean, == forecast / w_max
    sigma_norm: float    # normalized std after any clamping
    clamped: bool = False


def fit_beta_marginal(w_f: float, w_max: float, alpha_min: float = ALPHA_MIN) -> BetaMarginal:
    """Beta marginal for one unit and interval given its forecast w_f [kW].

    The normalized mean is w_f / w_max and the normalized standard deviation
    is SIGMA_SLOPE * mean + SIGMA_OFFSET.  When that std is too large for a
    Beta distribution (sigma^2 >= mu (1 - mu)), it is clamped down to the
    largest value keeping both shape parameters >= alpha_min, and the
    marginal is flagged.  A forecast exactly at 0 or at w_max admits no Beta
    with nonzero spread and raises DegenerateMarginalError.
    """
    if not (np.isfinite(w_f) and np.isfinite(w_max)) or w_max <= 0:
        raise InputError(f"bad forecast/capacity pair ({w_f}, {w_max})")
    if w_f < 0 or w_f > w_max:
        raise InputError(f"forecast {w_f} outside [0, {w_max}]")
    mu = w_f / w_max
    if mu == 0.0 or mu == 1.0:
        raise DegenerateMarginalError(
            f"normalized forecast {mu} admits no Beta marginal; treat the unit as deterministic"
        )
    sigma = SIGMA_SLOPE * mu + SIGMA_OFFSET
    # moment inversion: m = mu(1-mu)/sigma^2 - 1, alpha = mu m, beta = (1-mu) m
    clamped = False
    m = mu * (1.0 - mu) / sigma**2 - 1.0
    m_floor = alpha_min / min(mu, 1.0 - mu)
    if m < m_floor:
        m = m_floor
        sigma = float(np.sqrt(mu * (1.0 - mu) / (1.0 + m)))
        clamped = True
    return BetaMarginal(
        w_max=float(w_max),
        alpha=mu * m,
        beta=(1.0 - mu) * m,
        mu_norm=mu,
        sigma_norm=float(sigma),
        clamped=clamped,
    )


def beta_cdf(x: float, marginal: BetaMarginal) -> float:
    """P(W <= x) for x in kW."""
    if not np.isfinite(x) or x < -1e-12 or x > marginal.w_max * (1 + 1e-12):
        raise InputError(f"power {x} outside [0, {marginal.w_max}]")
    z = min(max(x / marginal.w_max, 0.0), 1.0)
    return float(betainc(marginal.alpha, marginal.beta, z))


def beta_inv_cdf(p, marginal: BetaMarginal):
    """Quantile of the marginal in kW; accepts scalars or arrays of p in [0, 1]."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InputError("probabilities must lie in [0, 1]")
    out = marginal.w_max * betaincinv(marginal.alpha, marginal.beta, p)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Gaussian copula over (actual_1..I, forecast_1..I) normal scores
# --------------------------------------------------------------------------

@dataclass
class CopulaModel:
    """Score correlation of the 2I stacked (actual, forecast) variables.

    `column_values` holds each history column sorted ascending and backs the
    empirical-CDF transform that maps new forecast values to normal scores.
    """

    correlation: np.ndarray            # (2I, 2I), unit diagonal
    column_values: np.ndarray = None   # (2I, n_records) sorted rows, optional
    names: tuple = None

    @property
    def dimension(self) -> int:
        return self.correlation.shape[0]

    def validate(self):
        r = self.correlation
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] % 2:
            raise InputError(f"correlation must be square with even dimension, got {r.shape}")
        if not np.allclose(np.diag(r), 1.0, atol=1e-10):
            raise InputError("correlation diagonal must be 1")
        if not np.allclose(r, r.T, atol=1e-10):
            raise InputError("correlation must be symmetric")
        w = np.linalg.eigvalsh(0.5 * (r + r.T))
        if w.min() < -1e-8:
            raise NumericalError(f"correlation is indefinite (min eigenvalue {w.min():.3e})")
        return self


def _nearest_unit_diag_psd(r: np.ndarray) -> np.ndarray:
    """Floor the eigenvalues at EIG_FLOOR and rescale back to unit diagonal."""
    w, v = np.linalg.eigh(0.5 * (r + r.T))
    if w.min() >= EIG_FLOOR:
        return r
    w = np.clip(w, EIG_FLOOR, None)
    a = (v * w) @ v.T
    d = np.sqrt(np.diag(a))
    a = a / np.outer(d, d)
    np.fill_diagonal(a, 1.0)
    return 0.5 * (a + a.T)


def fit_gaussian_copula(history, names=None, min_records: int = 30) -> CopulaModel:
    """Fit the score correlation from an (n, 2I) history of actual/forecast kW.

    Each column is rank-transformed with plotting positions rank/(n+1), ties
    averaged, then mapped through the standard normal quantile; the copula
    correlation is the plain correlation of those scores, repaired to be
    positive definite if rounding or ties drove an eigenvalue below the floor.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape[1] < 2 or h.shape[1] % 2:
        raise InputError(f"history must be (n, 2I) with I >= 1, got {h.shape}")
    n = h.shape[0]
    if n < min_records:
        raise InputError(f"history has {n} records; at least {min_records} required")
    if not np.all(np.isfinite(h)):
        raise InputError("history contains non-finite values")
    for j in range(h.shape[1]):
        if np.unique(h[:, j]).size < 2:
            raise DegenerateColumnError(names[j] if names else j)
    scores = ndtri(rankdata(h, axis=0, method="average") / (n + 1.0))
    corr = np.corrcoef(scores, rowvar=False)
    corr = _nearest_unit_diag_psd(corr)
    return CopulaModel(
        correlation=corr,
        column_values=np.sort(h, axis=0).T.copy(),
        names=tuple(names) if names else None,
    ).validate()


def _empirical_scores(copula: CopulaModel, forecasts: np.ndarray) -> np.ndarray:
    """Normal scores of forecast values via the stored per-column empirical CDFs."""
    i_count = copula.dimension // 2
    if copula.column_values is None:
        return np.zeros_like(forecasts)
    n = copula.column_values.shape[1]
    z = np.empty_like(forecasts, dtype=float)
    for i in range(i_count):
        col = copula.column_values[i_count + i]
        lo = np.searchsorted(col, forecasts[:, i], side="left")
        hi = np.searchsorted(col, forecasts[:, i], side="right")
        u = (lo + hi + 1.0) / (2.0 * (n + 1.0))
        z[:, i] = ndtri(u)
    return z


# --------------------------------------------------------------------------
# scenario sets
# --------------------------------------------------------------------------

@dataclass
class ScenarioSet:
    """S equiprobable joint PV trajectories: values[s, t, i] in kW."""

    values: np.ndarray         # (S, T, I) actual powers [kW]
    probabilities: np.ndarray  # (S,), sums to 1

    @property
    def S(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def I(self) -> int:
        return self.values.shape[2]

    def validate(self, w_max=None):
        if self.values.ndim != 3:
            raise InputError("scenario values must be (S, T, I)")
        if self.probabilities.shape != (self.S,):
            raise InputError("probability vector length must equal S")
        if abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise InputError(f"probabilities sum to {self.probabilities.sum()!r}, not 1")
        if np.any(self.probabilities < 0):
            raise InputError("probabilities must be non-negative")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < -1e-9):
            raise InputError("scenario powers must be finite and non-negative")
        if w_max is not None:
            cap = np.asarray(w_max, dtype=float)
            if np.any(self.values > cap[None, None, :] * (1 + 1e-9)):
                raise InputError("scenario power exceeds a unit's w_max")
        return self


def _conditional_blocks(copula: CopulaModel, i_count: int):
    r = copula.correlation
    if r.shape[0] != 2 * i_count:
        raise InputError(
            f"copula dimension {r.shape[0]} does not match 2I = {2 * i_count}"
        )
    raa = r[:i_count, :i_count]
    raf = r[:i_count, i_count:]
    rff = r[i_count:, i_count:]
    rff_inv = np.linalg.pinv(rff, rcond=1e-12, hermitian=True)
    gain = raf @ rff_inv
    cov = raa - gain @ raf.T
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise NumericalError("conditional covariance is not finite")
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-8:
        raise NumericalError(
            "conditional covariance is not positive semidefinite "
            f"(min eigenvalue {w.min():.3e}, cond(R_ff) {np.linalg.cond(rff):.3e})"
        )
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    sd = np.sqrt(np.clip(np.diag(cov), 1e-16, None))
    degenerate = np.diag(cov) < 1e-14
    return gain, factor, sd, degenerate


def _invert_marginals(u: np.ndarray, marginals_t, forecasts_t) -> np.ndarray:
    """Map uniforms (S, I) through each unit's Beta quantile (kW)."""
    out = np.empty_like(u)
    for i, marg in enumerate(marginals_t):
        if marg is None:
            out[:, i] = forecasts_t[i]   # degenerate unit: deterministic at forecast
        else:
            out[:, i] = beta_inv_cdf(u[:, i], marg)
    return out


def conditional_sample(
    copula: CopulaModel,
    marginals,
    forecasts,
    n_scenarios: int,
    seed: int,
    time_ar1: float = 0.0,
) -> ScenarioSet:
    """Draw S scenarios of all units over T intervals, conditioned on forecasts.

    Per interval the forecast values are mapped to normal scores, the
    actual-score block is conditioned on them (block partition of the score
    correlation), and S conditional Gaussian samples are drawn.  Samples are
    standardized component-wise (the conditional marginals must stay exactly
    the fitted Betas) and pushed through each unit's inverse Beta CDF.
    Optional AR(1) coupling with coefficient `time_ar1` correlates the score
    fluctuations across consecutive intervals; 0 leaves intervals independent.
    """
    fc = np.asarray(forecasts, dtype=float)
    if fc.ndim != 2:
        raise InputError("forecasts must be (T, I)")
    t_count, i_count = fc.shape
    if n_scenarios < 1:
        raise InputError("need at least one scenario")
    if not -1.0 < time_ar1 < 1.0:
        raise InputError(f"time_ar1 must lie in (-1, 1), got {time_ar1}")
    if len(marginals) != t_count:
        raise InputError("marginals must be given per interval")
    gain, factor, sd, degenerate = _conditional_blocks(copula, i_count)
    z_f = _empirical_scores(copula, fc)

    rng = np.random.default_rng(seed)
    values = np.empty((n_scenarios, t_count, i_count))
    carry = np.zeros((n_scenarios, i_count))
    mix = float(np.sqrt(1.0 - time_ar1**2))
    for t in range(t_count):
        if len(marginals[t]) != i_count:
            raise InputError(f"interval {t}: expected {i_count} marginals")
        mean = z_f[t] @ gain.T                 # conditional mean from forecast scores
        fluct = rng.standard_normal((n_scenarios, i_count)) @ factor.T
        carry = time_ar1 * carry + mix * fluct
        z = mean + carry                       # conditional Gaussian sample
        z_std = (z - mean) / sd                # keep each unit's Beta marginal exact
        z_std[:, degenerate] = 0.0
        u = ndtr(z_std)
        values[:, t, :] = _invert_marginals(u, marginals[t], fc[t])
    probs = np.full(n_scenarios, 1.0 / n_scenarios)
    return ScenarioSet(values=values, probabilities=probs).validate()


def sample_independent(marginals, forecasts, n_scenarios: int, seed: int) -> ScenarioSet:
    """Same marginals, but units sampled independently (no copula coupling)."""
    fc = np.asarray(forecasts, dtype=float)
    if fc.ndim != 2:
        raise InputError("forecasts must be (T, I)")
    t_count, i_count = fc.shape
    if n_scenarios < 1:
        raise InputError("need at least one scenario")
    rng = np.random.default_rng(seed)
    values = np.empty((n_scenarios, t_count, i_count))
    for t in range(t_count):
        u = ndtr(rng.standard_normal((n_scenarios, i_count)))
        values[:, t, :] = _invert_marginals(u, marginals[t], fc[t])
    probs = np.full(n_scenarios, 1.0 / n_scenarios)
    return ScenarioSet(values=values, probabilities=probs).validate()


def deterministic_set(forecasts) -> ScenarioSet:
    """Single scenario pinned at the forecast trajectory."""
    fc = np.asarray(forecasts, dtype=float)
    if fc.ndim != 2:
        raise InputError("forecasts must be (T, I)")
    return ScenarioSet(values=fc[None, :, :].copy(), probabilities=np.array([1.0])).validate()


def build_marginals(pv_specs, forecasts, alpha_min: float = ALPHA_MIN):
    """Per-interval Beta marginals for every unit; degenerate forecasts map to None."""
    fc = np.asarray(forecasts, dtype=float)
    if fc.ndim != 2 or fc.shape[1] != len(pv_specs):
        raise InputError(f"forecasts must be (T, {len(pv_specs)})")
    out = []
    for t in range(fc.shape[0]):
        row = []
        for i, pv in enumerate(pv_specs):
            w_f = fc[t, i]
            if w_f < -1e-12 or w_f > pv.w_max * (1 + 1e-9):
                raise InputError(
                    f"forecast {w_f} for pv node {pv.node} at interval {t} "
                    f"outside [0, {pv.w_max}]"
                )
            w_f = min(max(w_f, 0.0), pv.w_max)
            if w_f == 0.0 or w_f == pv.w_max:
                row.append(None)
            else:
                row.append(fit_beta_marginal(w_f, pv.w_max, alpha_min))
        out.append(row)
    return out


def generate_scenarios(
    pv_specs,
    forecasts,
    n_scenarios: int,
    seed: int,
    copula: CopulaModel = None,
    time_ar1: float = 0.0,
) -> ScenarioSet:
    """End-to-end generation: marginals from forecasts, then copula or independent sampling."""
    marginals = build_marginals(pv_specs, forecasts)
    if copula is None:
        sset = sample_independent(marginals, forecasts, n_scenarios, seed)
    else:
        sset = conditional_sample(copula, marginals, forecasts, n_scenarios, seed, time_ar1)
    return sset.validate(w_max=np.array([pv.w_max for pv in pv_specs]))


# --------------------------------------------------------------------------
# aggregate power bands
# --------------------------------------------------------------------------

def sum_power_bands(scenario_set: ScenarioSet, levels):
    """Central bands of the summed PV power per interval.

    For each coverage level the S per-scenario sums are ranked and an equal
    number of scenarios, ceil((1 - level) / 2 * S), is trimmed from each end;
    the band is [smallest kept, largest kept].  Returns {level: (T, 2) array}.
    """
    sums = scenario_set.values.sum(axis=2)       # (S, T)
    s_count = scenario_set.S
    ordered = np.sort(sums, axis=0)
    bands = {}
    for level in levels:
        if not 0.0 < level <= 1.0:
            raise InputError(f"coverage level {level} outside (0, 1]")
        trim = int(np.ceil((1.0 - level) / 2.0 * s_count - 1e-9))
        trim = min(trim, (s_count - 1) // 2)
        lo = ordered[trim]
        hi = ordered[s_count - 1 - trim]
        bands[float(level)] = np.stack([lo, hi], axis=1)
    return bands


def band_area(band: np.ndarray) -> float:
    """Total band width summed over intervals (kW-intervals)."""
    return float(np.sum(band[:, 1] - band[:, 0]))
