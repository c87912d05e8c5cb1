from .history import ConcurrencyHistory
from .lstm import LstmHyper, LstmModel, lstm_forward, lstm_gradients, lstm_train, make_windows, mse_loss
from .predictors import HttpPredictor, LstmPredictor, NaivePredictor, serve_predictor
from .strategies import (
    PrewarmPlan,
    ceil_count,
    chscg_counts,
    plan_bpcg,
    plan_chscg,
    plan_fpcg,
    predict_workflow_concurrency,
)

__all__ = [
    "ConcurrencyHistory",
    "HttpPredictor",
    "LstmHyper",
    "LstmModel",
    "LstmPredictor",
    "NaivePredictor",
    "PrewarmPlan",
    "ceil_count",
    "chscg_counts",
    "lstm_forward",
    "lstm_gradients",
    "lstm_train",
    "make_windows",
    "mse_loss",
    "plan_bpcg",
    "plan_chscg",
    "plan_fpcg",
    "predict_workflow_concurrency",
    "serve_predictor",
]
