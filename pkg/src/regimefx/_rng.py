"""Counter-based per-path random streams.

Every Monte Carlo path owns a SplitMix64 stream keyed by ``base_seed + index``
and by a purpose tag (chain vs. spot). Because each path's draws depend only
on its own seed, results do not depend on batch order, batch size, or on which
backend ran the kernel. The same generator is written three times: plain
Python ints (single paths), numba scalars, and vectorised uint64 numpy arrays.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TWO_M53 = 1.0 / 9007199254740992.0
HALF_ULP = 0.5 * TWO_M53

CHAIN_KEY = 0x243F6A8885A308D3
SPOT_KEY = 0x13198A2E03707344


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_state(seed: int, key: int) -> int:
    """Initial stream state for one path."""
    return _mix((((seed & MASK64) ^ key) + GOLDEN) & MASK64)


def path_seeds(base_seed: int, n_paths: int) -> np.ndarray:
    """Per-path seeds ``base_seed + i`` (mod 2**64) as uint64."""
    base = np.uint64(base_seed & MASK64)
    return base + np.arange(n_paths, dtype=np.uint64)


class Stream:
    """Scalar stream used for single-path simulation."""

    __slots__ = ("state",)

    def __init__(self, seed: int, key: int):
        self.state = stream_state(seed, key)

    def uniform(self) -> float:
        self.state = (self.state + GOLDEN) & MASK64
        return (_mix(self.state) >> 11) * TWO_M53 + HALF_ULP


# -- numba -----------------------------------------------------------------

_U_GOLDEN = np.uint64(GOLDEN)
_U_MIX1 = np.uint64(MIX1)
_U_MIX2 = np.uint64(MIX2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)


@njit
def nb_mix(z):
    z = (z ^ (z >> _U30)) * _U_MIX1
    z = (z ^ (z >> _U27)) * _U_MIX2
    return z ^ (z >> _U31)


@njit
def nb_stream_state(seed, key):
    return nb_mix((seed ^ key) + _U_GOLDEN)


@njit
def nb_uniform(state):
    """Return ``(u, new_state)``."""
    state = state + _U_GOLDEN
    return float(nb_mix(state) >> _U11) * TWO_M53 + HALF_ULP, state


# -- numpy -----------------------------------------------------------------


def np_mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U30)) * _U_MIX1
    z = (z ^ (z >> _U27)) * _U_MIX2
    return z ^ (z >> _U31)


def np_stream_state(seeds: np.ndarray, key: int) -> np.ndarray:
    return np_mix((seeds ^ np.uint64(key)) + _U_GOLDEN)


def np_uniform(states: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Advance ``states[idx]`` in place and return one uniform per index."""
    s = states[idx] + _U_GOLDEN
    states[idx] = s
    return (np_mix(s) >> _U11).astype(np.float64) * TWO_M53 + HALF_ULP
