"""Path-level Monte Carlo oracle for the regime-switching jump-diffusion.

Within each sojourn of the chain the log-spot solution is exact, so there is
no time-stepping bias: a sojourn of length ``tau`` in state ``i`` adds
``(drift_i - sigma_i**2 / 2) tau + sigma_i sqrt(tau) N`` plus a
Poisson(``intensity_i * tau``) number of ``log Z`` draws.

Under the physical measure ``drift_i = mu_i`` with the original jump law;
under the risk-neutral measure ``drift_i = rd_i - rf_i - lambda*_i k*_i``
with the tilted law and intensity ``lambda*_i``. Physical runs also carry
the log of the Esscher density along the path.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from ._kernels import JUMP_GAMMA, JUMP_POINT_MASS, chain_tables, spot_batch
from ._rng import CHAIN_KEY, SPOT_KEY, Stream, path_seeds
from .esscher import EsscherParams, JumpSpec, RiskNeutralRegimeSet
from .markov_regime import ChainPath, RateMatrix, RegimeSet
from .pricing import PriceResult

Z_GATE = 3.0


class MeasureTag(enum.Enum):
    PHYSICAL = "physical"
    RISK_NEUTRAL = "risk_neutral"


@dataclass(frozen=True)
class Dynamics:
    """Per-state simulation inputs for one measure."""

    drift: NDArray[np.float64]
    sigma: NDArray[np.float64]
    intensity: NDArray[np.float64]
    jump_kind: int
    jump_param: NDArray[np.float64]
    jump_shape: NDArray[np.float64]
    theta_c: NDArray[np.float64]
    theta_j: NDArray[np.float64]
    lam_phys: NDArray[np.float64]
    m_theta_j: NDArray[np.float64]
    rdiff: NDArray[np.float64]

    @classmethod
    def physical(cls, regimes: RegimeSet, spec: JumpSpec, params: EsscherParams | None = None):
        n = regimes.n
        params = params or EsscherParams.identity(n)
        if params.n != n:
            raise ValueError("Esscher parameters must have one entry per state")
        params.check_domain(spec)
        return cls(
            drift=np.array(regimes.mu),
            sigma=np.array(regimes.sigma),
            intensity=np.array(regimes.lam),
            jump_kind=_kind_code(spec),
            jump_param=np.full(n, spec.param),
            jump_shape=np.full(n, spec.shape),
            theta_c=np.array(params.theta_c),
            theta_j=np.array(params.theta_j),
            lam_phys=np.array(regimes.lam),
            m_theta_j=np.array([spec.moment(t) for t in params.theta_j]),
            rdiff=regimes.rd - regimes.rf,
        )

    @classmethod
    def risk_neutral(cls, regimes: RegimeSet, rn: RiskNeutralRegimeSet):
        n = regimes.n
        if rn.n != n:
            raise ValueError("risk-neutral set must have one entry per state")
        kinds = {s.is_gamma_family for s in rn.tilted}
        if len(kinds) != 1:
            raise ValueError("all states must share one jump family")
        zeros = np.zeros(n)
        return cls(
            drift=regimes.rd - regimes.rf - rn.lambda_star * rn.k_star,
            sigma=np.array(regimes.sigma),
            intensity=np.array(rn.lambda_star),
            jump_kind=_kind_code(rn.tilted[0]),
            jump_param=np.array([s.param for s in rn.tilted]),
            jump_shape=np.array([s.shape for s in rn.tilted]),
            theta_c=zeros,
            theta_j=zeros,
            lam_phys=zeros,
            m_theta_j=np.ones(n),
            rdiff=regimes.rd - regimes.rf,
        )

    @classmethod
    def from_esscher(cls, regimes: RegimeSet, spec: JumpSpec, params: EsscherParams):
        """Dynamics under the measure induced by arbitrary Esscher parameters.

        Drift ``mu + theta_c sigma**2``, intensity ``lam M(theta_j)`` and the
        tilted jump law; no martingale condition is assumed, which is what
        makes the discounted-spot check informative.
        """
        n = regimes.n
        if params.n != n:
            raise ValueError("Esscher parameters must have one entry per state")
        params.check_domain(spec)
        zeros = np.zeros(n)
        tilted = [spec.tilt(t) for t in params.theta_j]
        return cls(
            drift=regimes.mu + params.theta_c * regimes.sigma**2,
            sigma=np.array(regimes.sigma),
            intensity=regimes.lam * np.array([spec.moment(t) for t in params.theta_j]),
            jump_kind=_kind_code(spec),
            jump_param=np.array([s.param for s in tilted]),
            jump_shape=np.array([s.shape for s in tilted]),
            theta_c=zeros,
            theta_j=zeros,
            lam_phys=zeros,
            m_theta_j=np.ones(n),
            rdiff=regimes.rd - regimes.rf,
        )

    def kernel_args(self) -> dict:
        return dict(
            drift=self.drift, sigma=self.sigma, intensity=self.intensity,
            jump_kind=self.jump_kind, jump_param=self.jump_param, jump_shape=self.jump_shape,
            theta_c=self.theta_c, theta_j=self.theta_j,
            lam_phys=self.lam_phys, m_theta_j=self.m_theta_j,
        )


def _kind_code(spec: JumpSpec) -> int:
    return JUMP_GAMMA if spec.is_gamma_family else JUMP_POINT_MASS


def _dynamics(regimes, spec, measure, rn, params) -> Dynamics:
    measure = MeasureTag(measure)
    if measure is MeasureTag.RISK_NEUTRAL:
        if rn is None:
            raise ValueError("risk-neutral simulation needs a RiskNeutralRegimeSet")
        return Dynamics.risk_neutral(regimes, rn)
    return Dynamics.physical(regimes, spec, params)


@dataclass(frozen=True)
class SpotPath:
    """One simulated path, sampled at the chain's switching times.

    ``log_spot[k]`` is ``log S`` at ``times[k]``; the grid runs from 0 to the
    horizon. ``log_density`` is the log Esscher density at the horizon (0 for
    risk-neutral runs).
    """

    times: NDArray[np.float64]
    log_spot: NDArray[np.float64]
    jump_count: int
    chain: ChainPath
    log_density: float
    discount_integral: float

    @property
    def spot(self) -> NDArray[np.float64]:
        return np.exp(self.log_spot)

    @property
    def terminal(self) -> float:
        return float(math.exp(self.log_spot[-1]))


def simulate_spot_path(
    regimes: RegimeSet, rate: RateMatrix, spec: JumpSpec, s0: float, horizon: float,
    measure: MeasureTag | str = MeasureTag.PHYSICAL, seed: int = 0, initial_state: int = 0,
    rn: RiskNeutralRegimeSet | None = None, params: EsscherParams | None = None,
) -> SpotPath:
    """Single path, drawing from the same per-seed streams as the batch kernel.

    ``spec`` is the physical jump law; risk-neutral runs take their tilted
    laws from ``rn``.
    """
    if not (s0 > 0 and horizon > 0):
        raise ValueError("need s0 > 0 and horizon > 0")
    dyn = _dynamics(regimes, spec, measure, rn, params)
    rates, cum, last = chain_tables(rate.pi)
    cs, ss = Stream(seed, CHAIN_KEY), Stream(seed, SPOT_KEY)

    times, logs = [0.0], [math.log(s0)]
    states, durations = [], []
    log_s, log_l, disc, n_jumps = math.log(s0), 0.0, 0.0, 0
    s, t = int(initial_state), 0.0
    while True:
        tau, final = horizon - t, True
        if rates[s] > 0.0:
            draw = -math.log(cs.uniform()) / rates[s]
            if draw < tau:
                tau, final = draw, False
        z = _normal(ss)
        sig = dyn.sigma[s]
        sd = sig * math.sqrt(tau)
        log_s += (dyn.drift[s] - 0.5 * sig * sig) * tau
        log_s += sd * z
        log_l += dyn.theta_c[s] * sd * z
        log_l -= 0.5 * (dyn.theta_c[s] * sig) ** 2 * tau
        log_l -= dyn.lam_phys[s] * (dyn.m_theta_j[s] - 1.0) * tau
        count = _poisson(dyn.intensity[s] * tau, ss)
        for _ in range(count):
            if dyn.jump_kind == JUMP_GAMMA:
                lz = _log_gamma(dyn.jump_shape[s], dyn.jump_param[s], ss)
            else:
                lz = math.log(dyn.jump_param[s])
            log_s += lz
            log_l += dyn.theta_j[s] * lz
        n_jumps += count
        disc += dyn.rdiff[s] * tau
        states.append(s)
        durations.append(tau)
        t = horizon if final else t + tau
        times.append(t)
        logs.append(log_s)
        if final:
            break
        target = cs.uniform() * rates[s]
        hit = np.nonzero(target < cum[s])[0]
        s = int(hit[0]) if hit.size else int(last[s])
    chain = ChainPath(rate.n, tuple(states), tuple(durations), float(horizon))
    return SpotPath(np.array(times), np.array(logs), n_jumps, chain, log_l, disc)


def _normal(stream: Stream) -> float:
    u1, u2 = stream.uniform(), stream.uniform()
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _log_gamma(shape: float, rate: float, stream: Stream) -> float:
    """Scalar mirror of the kernels' Marsaglia-Tsang ``log Gamma(shape, rate)`` draw."""
    if shape == 1.0:
        return math.log(-math.log(stream.uniform())) - math.log(rate)
    a = shape + 1.0 if shape < 1.0 else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _normal(stream)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        if math.log(stream.uniform()) < 0.5 * x * x + d - d * v + d * math.log(v):
            break
    lg = math.log(d) + math.log(v)
    if shape < 1.0:
        lg += math.log(stream.uniform()) / shape
    return lg - math.log(rate)


def _poisson(mu: float, stream: Stream) -> int:
    k = 0
    while mu > 30.0:
        k += _poisson_small(30.0, stream)
        mu -= 30.0
    return k + _poisson_small(mu, stream)


def _poisson_small(mu: float, stream: Stream) -> int:
    if mu <= 0.0:
        return 0
    u = stream.uniform()
    p = math.exp(-mu)
    f, n = p, 0
    while u > f and n < 1000:
        n += 1
        p *= mu / n
        f += p
    return n


@dataclass(frozen=True)
class TerminalSample:
    """Batch of simulated horizons: log-spot, log-density, jumps, occupation."""

    log_spot: NDArray[np.float64]
    log_density: NDArray[np.float64]
    jump_count: NDArray[np.int64]
    occupation: NDArray[np.float64]
    discount_integral: NDArray[np.float64]

    @property
    def n_paths(self) -> int:
        return self.log_spot.shape[0]


def simulate_terminal(
    regimes: RegimeSet, rate: RateMatrix, spec: JumpSpec, s0: float, horizon: float,
    measure: MeasureTag | str, n_paths: int, seed: int, initial_state: int = 0,
    rn: RiskNeutralRegimeSet | None = None, params: EsscherParams | None = None,
) -> TerminalSample:
    """``n_paths`` independent paths; path ``i`` uses seed ``seed + i``."""
    if not (s0 > 0 and horizon > 0):
        raise ValueError("need s0 > 0 and horizon > 0")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if not 0 <= initial_state < rate.n:
        raise ValueError(f"initial_state {initial_state} outside 0..{rate.n - 1}")
    dyn = _dynamics(regimes, spec, measure, rn, params)
    log_s, log_l, nj, occ = spot_batch(
        rate.pi, initial_state, horizon, path_seeds(seed, n_paths), **dyn.kernel_args()
    )
    return TerminalSample(log_s + math.log(s0), log_l, nj, occ, occ @ dyn.rdiff)


def _mean_se(x: NDArray) -> tuple[float, float]:
    n = x.shape[0]
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(x.mean()), se


def mc_price_call(
    s0: float, k: float, t: float, regimes: RegimeSet, rate: RateMatrix,
    rn: RiskNeutralRegimeSet, initial_state: int = 0, n_paths: int = 1_000_000, seed: int = 0,
) -> PriceResult:
    """Plain Monte Carlo call price under the risk-neutral measure."""
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    if not k > 0:
        raise ValueError("strike must be > 0")
    sample = simulate_terminal(regimes, rate, rn.tilted[0], s0, t, MeasureTag.RISK_NEUTRAL,
                               n_paths, seed, initial_state, rn=rn)
    payoff = np.exp(-sample.discount_integral) * np.maximum(np.exp(sample.log_spot) - k, 0.0)
    mean, se = _mean_se(payoff)
    return PriceResult(mean, se, n_paths, 0)


def reweighted_price_call(
    s0: float, k: float, t: float, regimes: RegimeSet, rate: RateMatrix, spec: JumpSpec,
    params: EsscherParams, initial_state: int = 0, n_paths: int = 1_000_000, seed: int = 0,
) -> PriceResult:
    """Risk-neutral call price from physical paths weighted by the Esscher density."""
    sample = simulate_terminal(regimes, rate, spec, s0, t, MeasureTag.PHYSICAL,
                               n_paths, seed, initial_state, params=params)
    payoff = np.exp(sample.log_density - sample.discount_integral) * np.maximum(
        np.exp(sample.log_spot) - k, 0.0
    )
    mean, se = _mean_se(payoff)
    return PriceResult(mean, se, n_paths, 0)


@dataclass(frozen=True)
class CheckResult:
    """Monte Carlo estimate compared with its exact target at a 3-sigma gate."""

    name: str
    estimate: float
    std_error: float
    target: float

    @property
    def z_score(self) -> float:
        diff = self.estimate - self.target
        if self.std_error == 0.0:
            return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return diff / self.std_error

    @property
    def passed(self) -> bool:
        if self.std_error == 0.0:
            return abs(self.estimate - self.target) <= 1e-12 * max(1.0, abs(self.target))
        return abs(self.z_score) <= Z_GATE

    def lines(self) -> Iterator[str]:
        yield f"{self.name}.estimate = {self.estimate!r}"
        yield f"{self.name}.std_error = {self.std_error!r}"
        yield f"{self.name}.target = {self.target!r}"
        yield f"{self.name}.z_score = {self.z_score!r}"
        yield f"{self.name}.result = {'pass' if self.passed else 'fail'}"


def check_esscher_density(
    regimes: RegimeSet, rate: RateMatrix, spec: JumpSpec, params: EsscherParams,
    horizon: float, n_paths: int, seed: int, initial_state: int = 0,
) -> tuple[float, float]:
    """Mean and standard error of the Esscher density at ``horizon`` (target 1)."""
    sample = simulate_terminal(regimes, rate, spec, 1.0, horizon, MeasureTag.PHYSICAL,
                               n_paths, seed, initial_state, params=params)
    return _mean_se(np.exp(sample.log_density))


def check_discounted_martingale(
    regimes: RegimeSet, rate: RateMatrix, rn: RiskNeutralRegimeSet, s0: float,
    horizon: float, n_paths: int, seed: int, initial_state: int = 0,
) -> tuple[float, float]:
    """Mean and standard error of ``exp(-int (rd - rf) ds) S_T / s0`` (target 1)."""
    sample = simulate_terminal(regimes, rate, rn.tilted[0], s0, horizon, MeasureTag.RISK_NEUTRAL,
                               n_paths, seed, initial_state, rn=rn)
    return _mean_se(np.exp(sample.log_spot - sample.discount_integral) / s0)


def check_esscher_martingale(
    regimes: RegimeSet, rate: RateMatrix, spec: JumpSpec, params: EsscherParams, s0: float,
    horizon: float, n_paths: int, seed: int, initial_state: int = 0,
) -> tuple[float, float]:
    """Like :func:`check_discounted_martingale`, but simulating under the
    measure that ``params`` actually induce (see :meth:`Dynamics.from_esscher`).
    Uncalibrated parameters show up as a mean away from 1.
    """
    if not (s0 > 0 and horizon > 0) or n_paths < 1:
        raise ValueError("need s0 > 0, horizon > 0 and n_paths >= 1")
    dyn = Dynamics.from_esscher(regimes, spec, params)
    log_s, _, _, occ = spot_batch(
        rate.pi, initial_state, horizon, path_seeds(seed, n_paths), **dyn.kernel_args()
    )
    return _mean_se(np.exp(log_s - occ @ dyn.rdiff))
