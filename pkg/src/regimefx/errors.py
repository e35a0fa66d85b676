"""Exception types raised across the package."""
from __future__ import annotations


class DomainError(ValueError):
    """A moment or transform was evaluated outside its convergence domain."""


class CalibrationError(ValueError):
    """The Esscher root search could not bracket a solution."""


class InfeasibleCalibrationError(CalibrationError):
    """The requested K0 cannot be matched at all (e.g. zero intensity, K0 != 0)."""


class MartingaleError(ValueError):
    """Esscher parameters do not satisfy the martingale condition."""


class UnobservedRegimeError(ValueError):
    """A regime never appeared as a prior state in the estimation window.

    ``counts`` holds the raw 3x3 count matrix and ``regimes`` the names of the
    empty rows, so callers can still report what was observed.
    """

    def __init__(self, regimes, counts):
        self.regimes = tuple(regimes)
        self.counts = counts
        super().__init__(
            "regime(s) never observed as prior state: " + ", ".join(self.regimes)
        )
