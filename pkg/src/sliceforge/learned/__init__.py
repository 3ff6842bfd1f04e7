from .forecaster import ForecasterConfig, ForecasterModel, forecast_load, train_forecaster
from .gradcheck import grad_check
from .oracle import oracle_label
from .predictor import SlicePredictorModel, TrainConfig, TrainResult, predict, train_predictor

__all__ = [
    "ForecasterConfig",
    "ForecasterModel",
    "SlicePredictorModel",
    "TrainConfig",
    "TrainResult",
    "forecast_load",
    "grad_check",
    "oracle_label",
    "predict",
    "train_forecaster",
    "train_predictor",
]
