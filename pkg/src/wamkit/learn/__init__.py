"""In-repo learning kernels: CART forests, MLP with backprop, small convnet."""

from .forest import Forest, ForestParams, fit_forest, oob_error, predict_forest
from .metrics import accuracy_metrics
from .mlp import Mlp, SgdConfig, TrainReport, TrainingDiverged, fit_mlp, mlp_loss, predict_mlp
from .convnet import ConvNet, conv_loss, fit_convnet, predict_convnet
from .container import load_payload, save_payload

__all__ = [
    "Forest", "ForestParams", "fit_forest", "predict_forest", "oob_error",
    "Mlp", "SgdConfig", "TrainReport", "TrainingDiverged", "fit_mlp",
    "predict_mlp", "mlp_loss",
    "ConvNet", "fit_convnet", "predict_convnet", "conv_loss",
    "accuracy_metrics", "save_payload", "load_payload",
]
