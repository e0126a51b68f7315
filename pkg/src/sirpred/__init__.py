"""Observer-based predictor for a SIR model with input and output delays."""

from sirpred.core import (
    Gains,
    HistoryBuffer,
    ModelParams,
    SimConfig,
    SirState,
    history_get,
    paper_params,
    validate_params,
)

__all__ = [
    "Gains",
    "HistoryBuffer",
    "ModelParams",
    "SimConfig",
    "SirState",
    "history_get",
    "paper_params",
    "validate_params",
]

__version__ = "0.1.0"
