"""European call pricing: Black-Scholes core, the Poisson-weighted Merton
series conditional on occupation times, and the Monte Carlo average over
simulated chain paths.

Prices discount with the rate differential ``rd - rf`` accumulated along the
chain path, i.e. ``exp(-int (rd - rf) ds) * E[(S_T - K)^+]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from ._kernels import series_batch, series_cap
from .esscher import JumpSpec, RiskNeutralRegimeSet, calibrate
from .markov_regime import OccupationTimes, RateMatrix, RegimeSet, sample_occupation_times

SQRT2 = math.sqrt(2.0)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def black_scholes_call(s: float, k: float, t: float, var: float, r: float) -> float:
    """Call value with squared volatility ``var`` and rate ``r`` (both per year).

    ``var == 0`` gives the discounted intrinsic value ``max(s - k e^{-rt}, 0)``.
    """
    if not (s > 0 and k > 0 and t > 0):
        raise ValueError(f"need s, k, t > 0 (got s={s}, k={k}, t={t})")
    if var < 0:
        raise ValueError("variance must be >= 0")
    disc = math.exp(-r * t)
    if var * t == 0.0:
        return max(s - k * disc, 0.0)
    sd = math.sqrt(var * t)
    d1 = (math.log(s / k) + (r + 0.5 * var) * t) / sd
    return s * norm_cdf(d1) - k * disc * norm_cdf(d1 - sd)


@dataclass(frozen=True)
class RegimeQuantities:
    """Occupation-weighted averages over ``[0, T]`` (all per year).

    ``sigma_j_sq`` is the log-jump variance averaged with the weights of
    ``lambda_bar_star``; it differs from the common per-state value only when
    the tilted jump laws differ across states.
    """

    r_bar: float
    u_bar: float
    lambda_bar_j: float
    lambda_bar_star: float
    drift_comp: float
    log_gain: float
    sigma_j_sq: float = 0.0

    def __post_init__(self):
        vals = (self.r_bar, self.u_bar, self.lambda_bar_j, self.lambda_bar_star,
                self.drift_comp, self.log_gain, self.sigma_j_sq)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("regime quantities must be finite")
        if self.u_bar <= 0:
            raise ValueError("average variance must be > 0")
        if self.lambda_bar_j < 0 or self.lambda_bar_star < 0:
            raise ValueError("averaged intensities must be >= 0")
        if self.sigma_j_sq < 0:
            raise ValueError("log-jump variance must be >= 0")


def _per_state(regimes: RegimeSet, rn: RiskNeutralRegimeSet) -> NDArray[np.float64]:
    """Rows: rd-rf, sigma^2, lambda*, (1+k*)lambda*, lambda* k*, log(1+k*), (1+k*)lambda* sigma_J^2."""
    if regimes.n != rn.n:
        raise ValueError("regime set and risk-neutral set disagree on the number of states")
    ls, ks = rn.lambda_star, rn.k_star
    return np.stack([
        regimes.rd - regimes.rf,
        regimes.sigma**2,
        ls,
        (1.0 + ks) * ls,
        ls * ks,
        np.where(ls > 0.0, np.log1p(ks), 0.0),
        (1.0 + ks) * ls * rn.sigma_j_sq_states,
    ])


def regime_quantities(j: OccupationTimes, regimes: RegimeSet, rn: RiskNeutralRegimeSet) -> RegimeQuantities:
    if not j.horizon > 0:
        raise ValueError("horizon must be > 0")
    q = quantity_arrays(j.j[None, :], j.horizon, regimes, rn)[0]
    return RegimeQuantities(*(float(v) for v in q))


def quantity_arrays(occ: NDArray, horizon: float, regimes: RegimeSet, rn: RiskNeutralRegimeSet):
    """Vectorised :func:`regime_quantities` over rows of an occupation matrix.

    Columns follow the field order of :class:`RegimeQuantities`.
    """
    q = (occ / horizon) @ _per_state(regimes, rn).T
    lam = q[:, 3]
    q[:, 6] = np.where(lam > 0.0, q[:, 6] / np.where(lam > 0.0, lam, 1.0), 0.0)
    return q


def default_series_cap(x: float) -> int:
    return int(series_cap(np.asarray(x)))


def poisson_weights(x: float, m_max: int) -> NDArray[np.float64]:
    m = np.arange(m_max + 1)
    if x == 0.0:
        return (m == 0).astype(np.float64)
    return np.exp(-x + m * math.log(x) - gammaln(m + 1.0))


def poisson_tail_bound(x: float, m_max: int) -> float:
    """Chernoff bound on ``P(N > m_max)`` for ``N ~ Poisson(x)``."""
    a = m_max + 1
    if x == 0.0:
        return 0.0
    if a <= x:
        return 1.0
    return math.exp(-x + a * (1.0 + math.log(x / a)))


def merton_conditional_price(
    s: float, k: float, t: float, q: RegimeQuantities, sigma_j_sq: float | None = None,
    m_max: int | None = None,
) -> float:
    """Poisson-weighted Black-Scholes series given averaged regime quantities.

    Term ``m`` uses variance ``u_bar + m sigma_j_sq / t`` and rate
    ``r_bar - drift_comp + m log_gain / t``; weights are Poisson with mean
    ``t * lambda_bar_star``. ``sigma_j_sq`` defaults to ``q.sigma_j_sq``.
    """
    if sigma_j_sq is None:
        sigma_j_sq = q.sigma_j_sq
    x = t * q.lambda_bar_star
    if m_max is None:
        m_max = default_series_cap(x)
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    total = 0.0
    for m, w in enumerate(poisson_weights(x, m_max)):
        if w == 0.0:
            continue
        var = q.u_bar + m * sigma_j_sq / t
        r = q.r_bar - q.drift_comp + m * q.log_gain / t
        total += w * black_scholes_call(s, k, t, var, r)
    return total


@dataclass(frozen=True)
class PriceResult:
    price: float
    std_error: float
    n_paths: int
    series_truncation: int

    def __post_init__(self):
        if self.price < 0 or self.std_error < 0:
            raise ValueError("price and std_error must be >= 0")


def _mean_se(x: NDArray) -> tuple[float, float]:
    n = x.shape[0]
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _validate_inputs(s, k, t, regimes, rate, rn, initial_state):
    if not (s > 0 and k > 0 and t > 0):
        raise ValueError(f"need s, k, t > 0 (got s={s}, k={k}, t={t})")
    if not (regimes.n == rate.n == rn.n):
        raise ValueError("regimes, rate matrix and risk-neutral set must have the same size")
    if not 0 <= initial_state < rate.n:
        raise ValueError(f"initial_state {initial_state} outside 0..{rate.n - 1}")


def occupation_sample(rate: RateMatrix, initial_state: int, t: float, n_paths: int, seed: int):
    """Occupation matrix for pricing; a single deterministic row if the start state is absorbing."""
    if rate.exit_rate(initial_state) <= 0.0:
        occ = np.zeros((1, rate.n))
        occ[0, initial_state] = t
        return occ
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    occ, _ = sample_occupation_times(rate, initial_state, t, n_paths, seed)
    return occ


def price_from_occupation(
    s: float, k: float, t: float, occ: NDArray, regimes: RegimeSet,
    rn: RiskNeutralRegimeSet, sigma_j_sq: float | None = None,
) -> PriceResult:
    """Series price averaged over the rows of an occupation matrix.

    ``sigma_j_sq=None`` uses each row's averaged log-jump variance.
    """
    q = quantity_arrays(occ, t, regimes, rn)
    sj = q[:, 6] if sigma_j_sq is None else sigma_j_sq
    prices = series_batch(s, k, t, q[:, 0], q[:, 1], q[:, 3], q[:, 4], q[:, 5], sj)
    mean, se = _mean_se(prices)
    cap = int(series_cap(q[:, 3] * t).max())
    return PriceResult(max(mean, 0.0), se, occ.shape[0], cap)


def price_call(
    s: float, k: float, t: float, regimes: RegimeSet, rate: RateMatrix,
    rn: RiskNeutralRegimeSet, sigma_j_sq: float | None = None,
    initial_state: int = 0, n_paths: int = 100_000, seed: int = 0,
) -> PriceResult:
    """Call price averaged over simulated occupation times.

    Path ``i`` of the chain uses seed ``seed + i``. Chains that cannot leave
    ``initial_state`` are priced without simulation (``n_paths == 1``,
    ``std_error == 0``).
    """
    _validate_inputs(s, k, t, regimes, rate, rn, initial_state)
    occ = occupation_sample(rate, initial_state, t, n_paths, seed)
    return price_from_occupation(s, k, t, occ, regimes, rn, sigma_j_sq)


@dataclass(frozen=True)
class CurveRow:
    s_over_k: float
    price_jump: float
    stderr_jump: float
    price_nojump: float
    stderr_nojump: float


CURVE_HEADER = ("s_over_k", "price_jump", "stderr_jump", "price_nojump", "stderr_nojump")


def price_curve(
    s: float, strikes: ArrayLike, t: float, regimes: RegimeSet, rate: RateMatrix,
    spec: JumpSpec, k0: float = 0.0, initial_state: int = 0,
    n_paths: int = 100_000, seed: int = 0, with_jumps: bool = True,
) -> list[CurveRow]:
    """Prices along a strike grid, with jumps and for the jump-free counterpart.

    Both models and every strike reuse one occupation-time sample, so the
    curves are smooth in the strike and directly comparable. The jump-free
    model sets every intensity to zero and recalibrates with ``K0 = 0``.
    With ``with_jumps=False`` the jump columns are NaN.
    """
    strikes = np.asarray(strikes, dtype=np.float64)
    if strikes.size == 0:
        raise ValueError("strike grid is empty")
    if np.any(strikes <= 0):
        raise ValueError("strikes must be > 0")
    flat = regimes.without_jumps()
    _, rn_flat = calibrate(flat, spec, 0.0)
    _validate_inputs(s, float(strikes[0]), t, regimes, rate, rn_flat, initial_state)
    rn_jump = calibrate(regimes, spec, k0)[1] if with_jumps else None

    occ = occupation_sample(rate, initial_state, t, n_paths, seed)
    rows = []
    for k in strikes:
        flat_res = price_from_occupation(s, k, t, occ, flat, rn_flat, 0.0)
        if rn_jump is not None:
            jump_res = price_from_occupation(s, k, t, occ, regimes, rn_jump)
            pj, sj = jump_res.price, jump_res.std_error
        else:
            pj, sj = math.nan, math.nan
        rows.append(CurveRow(s / k, pj, sj, flat_res.price, flat_res.std_error))
    return rows
