"""Pyramid person matching network: atrous pyramid matching of image pairs for re-identification."""
from .errors import ConfigError, DatasetError, GraphError, NumericalError, PPMNError, ShapeError
from .model import GRADCHECK_CONFIG, FULL_SCALE_CONFIG, ModelConfig, PairScore, PPMN, build_model
from .ops import BACKEND
from .trainer import TrainConfig, mine_hard_negatives, train, train_with_hnm
from .evaluator import CmcCurve, evaluate_trials, report

__version__ = "0.1.0"
