"""Regime-switching jump-diffusion pricing of European FX calls."""
from ._accel import USE_NUMBA, backend_name
from .errors import (
    CalibrationError,
    DomainError,
    InfeasibleCalibrationError,
    MartingaleError,
    UnobservedRegimeError,
)
from .esscher import (
    EsscherParams,
    JumpSpec,
    RiskNeutralRegimeSet,
    calibrate,
    martingale_residual,
    solve_esscher,
    to_risk_neutral,
)
from .markov_regime import (
    ChainPath,
    EstimatorWindows,
    OccupationTimes,
    RateMatrix,
    RegimeSet,
    TransitionMatrix,
    estimate_transition_matrix,
    occupation_mgf,
    occupation_times,
    simulate_chain_path,
    transition_to_rate,
)
from .pricing import PriceResult, black_scholes_call, merton_conditional_price, price_call, price_curve
from .simulation import MeasureTag, mc_price_call, simulate_spot_path

__version__ = "0.1.0"
