"""Jump-size laws, the regime-switching Esscher transform and its calibration.

For a jump-size law ``nu`` on the positive half-line the whole construction
runs through the power-moment functional ``M(a) = int x**a nu(dx)``:

* risk-neutral intensity ``lam * M(theta_j)``,
* mean percentage jump ``M(theta_j + 1) / M(theta_j) - 1``,
* martingale drift residual
  ``rf - rd + mu + theta_c * sigma**2 + lam * (M(theta_j + 1) - M(theta_j))``,
* tilted jump law ``x**theta_j nu(dx) / M(theta_j)``.

Tilting an exponential law with rate ``theta`` gives a gamma law with shape
``theta_j + 1`` and the same rate. Its mean is ``1 / theta_tilde`` with
``theta_tilde = theta / (theta_j + 1)``, so the exponential law with rate
``theta_tilde`` has the right mean but not the right shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.special import gammaln, polygamma

from .errors import CalibrationError, DomainError, InfeasibleCalibrationError, MartingaleError
from .markov_regime import RegimeSet

EXPONENTIAL = "exponential"
GAMMA = "gamma"
POINT_MASS = "point_mass"
KINDS = (EXPONENTIAL, GAMMA, POINT_MASS)

BRACKET_EPS = 1e-8
BRACKET_UPPER = 8.0
BRACKET_UPPER_MAX = 64.0
ROOT_TOL = 1e-12
MARTINGALE_TOL = 1e-8


@dataclass(frozen=True)
class JumpSpec:
    """Law of the multiplicative jump ``Z > 0``.

    ``exponential``: density ``theta exp(-theta x)``. ``gamma``: density
    ``theta**shape x**(shape - 1) exp(-theta x) / Gamma(shape)``, the family
    closed under Esscher tilting (exponential is ``shape == 1``).
    ``point_mass``: ``Z == z``. ``param`` holds ``theta`` or ``z``.
    """

    kind: str
    param: float
    shape: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown jump kind {self.kind!r}")
        if not (self.param > 0 and math.isfinite(self.param)):
            raise ValueError(f"jump parameter must be positive and finite, got {self.param}")
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise ValueError(f"gamma shape must be positive and finite, got {self.shape}")
        if self.kind != GAMMA and self.shape != 1.0:
            raise ValueError(f"{self.kind} jumps take no shape parameter")
        object.__setattr__(self, "param", float(self.param))
        object.__setattr__(self, "shape", float(self.shape))

    @classmethod
    def exponential(cls, theta: float) -> "JumpSpec":
        return cls(EXPONENTIAL, theta)

    @classmethod
    def gamma(cls, shape: float, theta: float) -> "JumpSpec":
        return cls(GAMMA, theta, shape)

    @classmethod
    def point_mass(cls, z: float) -> "JumpSpec":
        return cls(POINT_MASS, z)

    @property
    def is_gamma_family(self) -> bool:
        return self.kind != POINT_MASS

    @property
    def domain_lower(self) -> float:
        """Infimum of the exponents ``a`` with finite ``M(a)``."""
        return -self.shape if self.is_gamma_family else -math.inf

    def log_moment(self, a: float) -> float:
        if self.is_gamma_family:
            if not a > -self.shape:
                raise DomainError(
                    f"M({a}) diverges for {self.kind} jumps (need a > {-self.shape:g})"
                )
            return float(gammaln(self.shape + a) - gammaln(self.shape) - a * math.log(self.param))
        return a * math.log(self.param)

    def moment(self, a: float) -> float:
        return math.exp(self.log_moment(a))

    def mean(self) -> float:
        return self.shape / self.param if self.is_gamma_family else self.param

    @property
    def mean_rate(self) -> float:
        """Rate of the exponential law with the same mean, ``1 / E[Z]``."""
        return 1.0 / self.mean()

    @property
    def log_jump_variance(self) -> float:
        """Var[log Z]: trigamma(shape) for the gamma family (pi**2/6 if exponential)."""
        if self.kind == EXPONENTIAL:
            return math.pi**2 / 6.0
        if self.kind == GAMMA:
            return float(polygamma(1, self.shape))
        return 0.0

    def tilt(self, theta_j: float) -> "JumpSpec":
        """Law with density ``x**theta_j nu(x) / M(theta_j)``.

        Tilting a gamma law adds ``theta_j`` to its shape and keeps the rate.
        """
        self.log_moment(theta_j)
        if not self.is_gamma_family or theta_j == 0.0:
            return self
        return JumpSpec.gamma(self.shape + theta_j, self.param)

    def jump_gap(self, t: float) -> float:
        """``g(t) = M(t + 1) - M(t)``, the jump term of the martingale condition."""
        if self.is_gamma_family:
            # M(t+1) = M(t) (shape + t) / theta, through log-Gamma
            return math.exp(self.log_moment(t)) * ((self.shape + t) / self.param - 1.0)
        return math.exp(self.log_moment(t)) * (self.param - 1.0)


def moment(spec: JumpSpec, a: float) -> float:
    return spec.moment(a)


def risk_neutral_intensity(lam: float, theta_j: float, spec: JumpSpec) -> float:
    return lam * spec.moment(theta_j)


def mean_jump_size(theta_j: float, spec: JumpSpec) -> float:
    if spec.is_gamma_family:
        spec.log_moment(theta_j)
        return (spec.shape + theta_j) / spec.param - 1.0
    return math.exp(spec.log_moment(theta_j + 1.0) - spec.log_moment(theta_j)) - 1.0


@dataclass(frozen=True)
class EsscherParams:
    theta_c: NDArray[np.float64]
    theta_j: NDArray[np.float64]
    k0: float = 0.0

    def __post_init__(self):
        tc = np.array(self.theta_c, dtype=np.float64, ndmin=1)
        tj = np.array(self.theta_j, dtype=np.float64, ndmin=1)
        if tc.shape != tj.shape:
            raise ValueError("theta_c and theta_j must have one entry per state")
        tc.setflags(write=False)
        tj.setflags(write=False)
        object.__setattr__(self, "theta_c", tc)
        object.__setattr__(self, "theta_j", tj)
        object.__setattr__(self, "k0", float(self.k0))

    @property
    def n(self) -> int:
        return self.theta_c.shape[0]

    @classmethod
    def identity(cls, n: int) -> "EsscherParams":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    def check_domain(self, spec: JumpSpec) -> None:
        if spec.is_gamma_family and np.any(self.theta_j <= spec.domain_lower):
            raise DomainError(
                f"{spec.kind} jumps require theta_j > {spec.domain_lower:g} in every state"
            )


@dataclass(frozen=True)
class RiskNeutralRegimeSet:
    """Jump parameters after the measure change, one entry per state."""

    lambda_star: NDArray[np.float64]
    k_star: NDArray[np.float64]
    tilted: tuple[JumpSpec, ...]

    def __post_init__(self):
        ls = np.array(self.lambda_star, dtype=np.float64, ndmin=1)
        ks = np.array(self.k_star, dtype=np.float64, ndmin=1)
        if np.any(ls < 0):
            raise ValueError("risk-neutral intensities must be >= 0")
        if np.any(1.0 + ks <= 0):
            raise ValueError("mean percentage jump must exceed -1")
        ls.setflags(write=False)
        ks.setflags(write=False)
        object.__setattr__(self, "lambda_star", ls)
        object.__setattr__(self, "k_star", ks)
        object.__setattr__(self, "tilted", tuple(self.tilted))

    @property
    def n(self) -> int:
        return self.lambda_star.shape[0]

    def tilted_rates(self) -> NDArray[np.float64]:
        """Mean-equivalent rates ``1 / E[Z]``, i.e. ``theta / (theta_j + 1)`` for exponential jumps."""
        return np.array([s.mean_rate for s in self.tilted])

    @property
    def sigma_j_sq_states(self) -> NDArray[np.float64]:
        """Var[log Z] under each state's tilted law."""
        return np.array([s.log_jump_variance for s in self.tilted])

    @property
    def sigma_j_sq(self) -> float:
        """Var[log Z] shared by all states; raises if the tilted laws differ."""
        values = self.sigma_j_sq_states
        if np.ptp(values) > 0.0:
            raise ValueError("tilted jump laws disagree on log-jump variance; use sigma_j_sq_states")
        return float(values[0])


def martingale_residual(regimes: RegimeSet, params: EsscherParams, spec: JumpSpec, state: int) -> float:
    """Drift of the discounted spot under the tilted measure in ``state`` (1/year).

    Zero exactly when the discounted spot is a martingale there.
    """
    i = state
    tj = float(params.theta_j[i])
    lam = float(regimes.lam[i])
    jump = lam * spec.jump_gap(tj) if lam else 0.0
    return float(
        regimes.rf[i] - regimes.rd[i] + regimes.mu[i]
        + params.theta_c[i] * regimes.sigma[i] ** 2
        + jump
    )


def martingale_residuals(regimes: RegimeSet, params: EsscherParams, spec: JumpSpec) -> NDArray:
    return np.array([martingale_residual(regimes, params, spec, i) for i in range(regimes.n)])


def attainable_range(spec: JumpSpec, upper: float = BRACKET_UPPER_MAX) -> tuple[float, float]:
    """Values of ``g`` at the widest search bracket."""
    lo = _lower_end(spec)
    return spec.jump_gap(lo), spec.jump_gap(upper)


def _lower_end(spec: JumpSpec) -> float:
    if spec.is_gamma_family:
        return spec.domain_lower + BRACKET_EPS
    return -BRACKET_UPPER_MAX


def solve_theta_j(spec: JumpSpec, target: float, state: int | None = None) -> float:
    """Root of ``g(t) = target`` on the admissible domain.

    The bracket starts at ``[lower + 1e-8, 8]`` and the upper end doubles up
    to 64 before the problem is declared infeasible.
    """
    label = "" if state is None else f"state {state}: "
    if spec.jump_gap(0.0) == target:
        return 0.0
    lo = _lower_end(spec)
    g_lo = spec.jump_gap(lo) - target
    hi = BRACKET_UPPER
    while True:
        g_hi = spec.jump_gap(hi) - target
        if np.sign(g_lo) != np.sign(g_hi) or hi >= BRACKET_UPPER_MAX:
            break
        hi *= 2.0
    if np.sign(g_lo) == np.sign(g_hi):
        a, b = attainable_range(spec)
        lo_v, hi_v = min(a, b), max(a, b)
        raise CalibrationError(
            f"{label}cannot match K0/lambda = {target:.6g}; attainable range of "
            f"M(t+1) - M(t) on [{lo:.3g}, {BRACKET_UPPER_MAX:g}] is [{lo_v:.6g}, {hi_v:.6g}]"
        )
    root = brentq(lambda t: spec.jump_gap(t) - target, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    resid = abs(spec.jump_gap(root) - target)
    if resid > ROOT_TOL * max(1.0, abs(target)):
        raise CalibrationError(f"{label}root search stalled with |g - target| = {resid:.3g}")
    return float(root)


def solve_esscher(regimes: RegimeSet, spec: JumpSpec, k0: float = 0.0) -> EsscherParams:
    """Risk-neutral Esscher parameters for every state.

    ``theta_j`` solves ``M(theta_j + 1) - M(theta_j) = k0 / lam`` so that the
    risk-neutral jump compensator ``lambda_star * k_star`` equals ``k0``;
    ``theta_c = (rd - rf - mu - k0) / sigma**2`` then zeroes the drift
    residual. States without jumps need ``k0 == 0`` and get ``theta_j = 0``.
    """
    theta_c = (regimes.rd - regimes.rf - regimes.mu - k0) / regimes.sigma**2
    theta_j = np.zeros(regimes.n)
    for i in range(regimes.n):
        lam = float(regimes.lam[i])
        if lam == 0.0:
            if k0 != 0.0:
                raise InfeasibleCalibrationError(
                    f"state {i}: zero jump intensity leaves K0 = {k0:g} unreachable (need K0 = 0)"
                )
            continue
        if spec.kind == POINT_MASS and spec.param == 1.0:
            if k0 != 0.0:
                raise InfeasibleCalibrationError(
                    f"state {i}: jumps of size 1 give M(t+1) - M(t) = 0, so K0 must be 0"
                )
            continue
        theta_j[i] = solve_theta_j(spec, k0 / lam, state=i)
    return EsscherParams(theta_c, theta_j, k0)


def to_risk_neutral(regimes: RegimeSet, params: EsscherParams, spec: JumpSpec) -> RiskNeutralRegimeSet:
    """Intensities, mean jumps and tilted laws under the calibrated measure."""
    params.check_domain(spec)
    res = martingale_residuals(regimes, params, spec)
    bad = np.nonzero(np.abs(res) > MARTINGALE_TOL)[0]
    if bad.size:
        raise MartingaleError(
            "martingale condition violated in state(s) "
            + ", ".join(f"{i} (residual {res[i]:.3g})" for i in bad)
        )
    lam_star = [risk_neutral_intensity(regimes.lam[i], params.theta_j[i], spec) for i in range(regimes.n)]
    k_star = [mean_jump_size(params.theta_j[i], spec) for i in range(regimes.n)]
    tilted = [spec.tilt(params.theta_j[i]) for i in range(regimes.n)]
    return RiskNeutralRegimeSet(lam_star, k_star, tilted)


def calibrate(regimes: RegimeSet, spec: JumpSpec, k0: float = 0.0):
    """``solve_esscher`` followed by ``to_risk_neutral``."""
    params = solve_esscher(regimes, spec, k0)
    return params, to_risk_neutral(regimes, params, spec)


def report_lines(regimes: RegimeSet, spec: JumpSpec, params: EsscherParams,
                 rn: RiskNeutralRegimeSet) -> Iterator[str]:
    """Key-value calibration report, one ``key = value`` line each."""
    yield f"jump_kind = {spec.kind}"
    yield f"jump_param = {float(spec.param)!r}"
    yield f"k0 = {float(params.k0)!r}"
    yield f"n_states = {regimes.n}"
    res = martingale_residuals(regimes, params, spec)
    for i in range(regimes.n):
        yield f"state{i}.theta_c = {float(params.theta_c[i])!r}"
        yield f"state{i}.theta_j = {float(params.theta_j[i])!r}"
        yield f"state{i}.lambda_star = {float(rn.lambda_star[i])!r}"
        yield f"state{i}.k_star = {float(rn.k_star[i])!r}"
        yield f"state{i}.tilted_shape = {float(rn.tilted[i].shape)!r}"
        yield f"state{i}.tilted_rate = {float(rn.tilted[i].param)!r}"
        yield f"state{i}.tilted_mean_rate = {float(rn.tilted[i].mean_rate)!r}"
        yield f"state{i}.residual = {float(res[i])!r}"
    yield f"max_abs_residual = {float(np.abs(res).max())!r}"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def tilted_moment_ratio(spec: JumpSpec, theta_j: float) -> float:
    """``M(theta_j + 1) / M(theta_j)`` through log-moments."""
    return math.exp(spec.log_moment(theta_j + 1.0) - spec.log_moment(theta_j))

