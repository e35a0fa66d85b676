"""Hidden Markov chain: regime parameters, path simulation, occupation times,
the occupation-time moment generating function, and the three-state
(up/down/sideway) transition matrix estimator for candle open prices.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import expm

from ._kernels import chain_batch, chain_tables
from ._rng import CHAIN_KEY, Stream, path_seeds
from .errors import UnobservedRegimeError

ROW_TOL = 1e-12
TRADING_DAY = 1.0 / 252.0
PIP = 1e-4
TREND_STATES = ("up", "down", "sideway")

# Probability matrix reported for the 2000-2013 EUR/USD open-price run with
# windows/thresholds (30, 30, 10, 10, 30, 30, 10, 10); rows are up, down, sideway.
EURUSD_2000_2013 = np.array(
    [
        [0.4408, 0.4527, 0.1065],
        [0.4818, 0.4149, 0.1033],
        [0.4820, 0.4119, 0.1061],
    ]
)


def _frozen(a: ArrayLike, ndim: int = 1) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RegimeSet:
    """Per-state market parameters of an ``n``-state chain.

    All rates are annualised: ``mu`` drift, ``sigma`` volatility, ``lam`` jump
    intensity, ``rd``/``rf`` domestic and foreign short rates.
    """

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    lam: NDArray[np.float64]
    rd: NDArray[np.float64]
    rf: NDArray[np.float64]

    def __post_init__(self):
        for name in ("mu", "sigma", "lam", "rd", "rf"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.mu.shape[0]
        if n < 1:
            raise ValueError("a regime set needs at least one state")
        for name in ("sigma", "lam", "rd", "rf"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be > 0 in every state")
        for name in ("lam", "rd", "rf"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be >= 0 in every state")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "RegimeSet":
        rows = list(rows)
        return cls(
            mu=[r["mu"] for r in rows],
            sigma=[r["sigma"] for r in rows],
            lam=[r["lam"] for r in rows],
            rd=[r["rd"] for r in rows],
            rf=[r["rf"] for r in rows],
        )

    @classmethod
    def single(cls, mu, sigma, lam, rd, rf) -> "RegimeSet":
        return cls([mu], [sigma], [lam], [rd], [rf])

    def state(self, i: int) -> "RegimeSet":
        """One-state regime set holding state ``i``'s parameters."""
        return RegimeSet.single(self.mu[i], self.sigma[i], self.lam[i], self.rd[i], self.rf[i])

    def without_jumps(self) -> "RegimeSet":
        return RegimeSet(self.mu, self.sigma, np.zeros(self.n), self.rd, self.rf)


@dataclass(frozen=True)
class RateMatrix:
    """CTMC generator in row convention: ``pi[i, j]`` is the i->j rate."""

    pi: NDArray[np.float64]

    def __post_init__(self):
        pi = _frozen(self.pi, ndim=2)
        object.__setattr__(self, "pi", pi)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise ValueError(f"rate matrix must be square, got shape {pi.shape}")
        off = pi[~np.eye(pi.shape[0], dtype=bool)]
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be >= 0")
        if not np.all(np.isfinite(pi)):
            raise ValueError("rate matrix must be finite")
        if np.any(np.abs(pi.sum(axis=1)) > ROW_TOL * max(1.0, np.abs(pi).max())):
            raise ValueError("rate matrix rows must sum to 0")

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    @classmethod
    def frozen_chain(cls, n: int) -> "RateMatrix":
        return cls(np.zeros((n, n)))

    def exit_rate(self, i: int) -> float:
        return float(-self.pi[i, i])


@dataclass(frozen=True)
class TransitionMatrix:
    """One-step transition probabilities for a step of ``dt`` years."""

    p: NDArray[np.float64]
    dt: float = TRADING_DAY

    def __post_init__(self):
        p = _frozen(self.p, ndim=2)
        object.__setattr__(self, "p", p)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition matrix rows must sum to 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class OccupationTimes:
    j: NDArray[np.float64]
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "j", _frozen(self.j))
        if np.any(self.j < 0):
            raise ValueError("occupation times must be >= 0")
        if abs(self.j.sum() - self.horizon) > ROW_TOL * max(1.0, self.horizon):
            raise ValueError("occupation times must sum to the horizon")


@dataclass(frozen=True)
class ChainPath:
    """A realised chain trajectory as consecutive (state, sojourn) pieces."""

    n_states: int
    states: tuple[int, ...]
    durations: tuple[float, ...]
    horizon: float = field(default=0.0)

    @property
    def initial_state(self) -> int:
        return self.states[0]

    @property
    def n_transitions(self) -> int:
        return len(self.states) - 1

    def __iter__(self):
        return iter(zip(self.states, self.durations))


def simulate_chain_path(rate: RateMatrix, initial_state: int, horizon: float, seed: int) -> ChainPath:
    """Simulate one chain path on ``[0, horizon]``.

    Sojourns are exponential with the state's exit rate; the next state is
    drawn in proportion to the off-diagonal rates. Absorbing states keep the
    path where it is. Uses the same per-seed stream as the batch kernels, so
    ``simulate_chain_path(rate, i, T, seed + k)`` reproduces path ``k`` of a
    batch started at ``seed``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    if not 0 <= initial_state < rate.n:
        raise ValueError(f"initial_state {initial_state} outside 0..{rate.n - 1}")
    rates, cum, last = chain_tables(rate.pi)
    stream = Stream(seed, CHAIN_KEY)
    states, durations = [], []
    s, t = int(initial_state), 0.0
    while True:
        remaining = horizon - t
        if rates[s] <= 0.0:
            states.append(s)
            durations.append(remaining)
            break
        tau = -math.log(stream.uniform()) / rates[s]
        if tau >= remaining:
            states.append(s)
            durations.append(remaining)
            break
        states.append(s)
        durations.append(tau)
        t += tau
        target = stream.uniform() * rates[s]
        hit = np.nonzero(target < cum[s])[0]
        s = int(hit[0]) if hit.size else int(last[s])
    return ChainPath(rate.n, tuple(states), tuple(durations), float(horizon))


def occupation_times(path: ChainPath) -> OccupationTimes:
    j = np.zeros(path.n_states)
    for s, d in path:
        j[s] += d
    return OccupationTimes(j, path.horizon if path.horizon else float(sum(path.durations)))


def sample_occupation_times(
    rate: RateMatrix, initial_state: int, horizon: float, n_paths: int, seed: int
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Occupation-time matrix ``(n_paths, n)`` and transition counts.

    Path ``k`` uses seed ``seed + k``; see :func:`simulate_chain_path`.
    """
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    if not 0 <= initial_state < rate.n:
        raise ValueError(f"initial_state {initial_state} outside 0..{rate.n - 1}")
    return chain_batch(rate.pi, initial_state, horizon, path_seeds(seed, n_paths))


def occupation_mgf(
    rate: RateMatrix, u: ArrayLike, horizon: float, initial_dist: ArrayLike
) -> float:
    """E[exp(<u, J(0, horizon)>)] for the chain started from ``initial_dist``.

    Evaluated as ``p0 @ expm((pi + diag(u)) * horizon) @ 1``.
    """
    u = np.asarray(u, dtype=np.float64)
    p0 = np.asarray(initial_dist, dtype=np.float64)
    if u.shape != (rate.n,) or p0.shape != (rate.n,):
        raise ValueError("u and initial_dist must have one entry per state")
    if abs(p0.sum() - 1.0) > ROW_TOL or np.any(p0 < 0):
        raise ValueError("initial_dist must be a probability vector")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    m = expm((rate.pi + np.diag(u)) * horizon)
    return float(p0 @ m.sum(axis=1))


def transition_to_rate(p: TransitionMatrix) -> RateMatrix:
    """Generator ``(P - I) / dt`` (always a valid rate matrix)."""
    pi = (p.p - np.eye(p.p.shape[0])) / p.dt
    # rows of P sum to 1 only up to rounding; put the residue on the diagonal
    np.fill_diagonal(pi, 0.0)
    np.fill_diagonal(pi, -pi.sum(axis=1))
    return RateMatrix(pi)


# ---------------------------------------------------------------------------
# trend-regime estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorWindows:
    """Window lengths (bars) and thresholds (pips) of the trend classifier.

    Field order follows the original eight-argument routine. The ``delta_back_*``
    thresholds are accepted for signature compatibility but, as in that
    routine, both the prior and the future classification use
    ``delta_up``/``delta_down``.
    """

    candles_back_up: int = 30
    candles_back_down: int = 30
    delta_back_up: float = 10
    delta_back_down: float = 10
    candles_up: int = 30
    candles_down: int = 30
    delta_up: float = 10
    delta_down: float = 10

    def __post_init__(self):
        for name in ("candles_back_up", "candles_back_down", "candles_up", "candles_down"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        for name in ("delta_back_up", "delta_back_down", "delta_up", "delta_down"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    def as_tuple(self) -> tuple:
        return (
            self.candles_back_up, self.candles_back_down,
            self.delta_back_up, self.delta_back_down,
            self.candles_up, self.candles_down,
            self.delta_up, self.delta_down,
        )


def classify_trends(opens: ArrayLike, windows: EstimatorWindows) -> tuple[NDArray, NDArray]:
    """Prior and future trend labels per bar (0 up, 1 down, 2 sideway).

    Prior labels: the down test overrides the up test, warm-up bars are
    sideway. Future labels: the up test wins. Only the first
    ``len(opens) - max(candles_up, candles_down)`` bars get a future label.
    """
    x = np.asarray(opens, dtype=np.float64)
    w = windows
    d_up = w.delta_up / 10000
    d_down = w.delta_down / 10000
    size = x.shape[0]

    prior = np.full(size, 2, dtype=np.int64)
    start = max(w.candles_back_up, w.candles_back_down)
    i = np.arange(start, size)
    up = x[i] - x[i - w.candles_back_up] >= d_up
    down = x[i - w.candles_back_down] - x[i] >= d_down
    prior[i] = np.where(down, 1, np.where(up, 0, 2))

    upper = size - max(w.candles_up, w.candles_down)
    i = np.arange(upper)
    f_up = x[i + w.candles_up] - x[i] >= d_up
    f_down = x[i] - x[i + w.candles_down] >= d_down
    future = np.where(f_up, 0, np.where(f_down, 1, 2))
    return prior, future


def estimate_transition_matrix(
    opens: ArrayLike,
    windows: EstimatorWindows | None = None,
    dt: float = TRADING_DAY,
    **kwargs,
) -> tuple[TransitionMatrix, NDArray[np.int64]]:
    """Count prior->future trend transitions and row-normalise.

    Window/threshold values come from ``windows`` or keyword arguments named
    like the fields of :class:`EstimatorWindows`. Raises
    :class:`UnobservedRegimeError` if some trend never occurs as a prior state.
    """
    if windows is None:
        windows = EstimatorWindows(**kwargs)
    elif kwargs:
        raise TypeError("pass either windows or keyword thresholds, not both")
    x = np.asarray(opens, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("opens must be a one-dimensional price series")
    need = max(windows.candles_back_up, windows.candles_back_down) + max(
        windows.candles_up, windows.candles_down
    )
    if x.shape[0] <= need:
        raise ValueError(f"series too short: {x.shape[0]} bars, need more than {need}")
    prior, future = classify_trends(x, windows)
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (prior[: future.shape[0]], future), 1)
    totals = counts.sum(axis=1)
    empty = [TREND_STATES[k] for k in range(3) if totals[k] == 0]
    if empty:
        raise UnobservedRegimeError(empty, counts)
    p = counts / totals[:, None]
    # last column absorbs the rounding residue so each row sums to exactly 1
    p[:, 2] = 1.0 - (p[:, 0] + p[:, 1])
    return TransitionMatrix(p, dt), counts


def read_open_prices(path: str | Path) -> NDArray[np.float64]:
    """One price per line; a non-numeric first line is treated as a header."""
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh):
            line = raw.strip()
            if not line:
                continue
            cell = line.split(",")[0].strip()
            try:
                values.append(float(cell))
            except ValueError:
                if lineno == 0 and not values:
                    continue
                raise ValueError(f"{path}:{lineno + 1}: not a price: {line!r}") from None
    return np.asarray(values)


def write_matrix_csv(path: str | Path, p: NDArray, rows: Sequence[int] = (0, 1, 2)) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", *TREND_STATES])
        for k in rows:
            w.writerow([TREND_STATES[k], *(repr(float(v)) for v in p[k])])


def write_counts_csv(path: str | Path, counts: NDArray, windows: EstimatorWindows) -> None:
    names = (
        "candles_back_up", "candles_back_down", "delta_back_up", "delta_back_down",
        "candles_up", "candles_down", "delta_up", "delta_down",
    )
    params = " ".join(f"{n}={v:g}" for n, v in zip(names, windows.as_tuple()))
    with open(path, "w", newline="") as fh:
        fh.write(f"# {params}\n")
        w = csv.writer(fh)
        w.writerow(["state", *TREND_STATES])
        for k in range(3):
            w.writerow([TREND_STATES[k], *(int(v) for v in counts[k])])


def read_matrix_csv(path: str | Path, dt: float = TRADING_DAY) -> TransitionMatrix:
    """Read a ``state,up,down,sideway`` matrix file written by :func:`write_matrix_csv`."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if [h.strip() for h in header] != ["state", *TREND_STATES]:
        raise ValueError(f"{path}: unexpected header {header}")
    by_state = {r[0].strip(): [float(v) for v in r[1:]] for r in body}
    missing = [s for s in TREND_STATES if s not in by_state]
    if missing:
        raise ValueError(f"{path}: missing rows for {', '.join(missing)}")
    return TransitionMatrix(np.array([by_state[s] for s in TREND_STATES]), dt)
