"""Hyperspectral fruit ripeness pipeline: calibration, preprocessing, models, attribution."""
from .cube import CAMERAS, HyperCube, RawFrame, WavelengthAxis, calibrate
from .dataset import AugmentationConfig, LabelRecord
from .models import ModelConfig, build_hscnn, build_model, count_parameters
from .training import EvalReport, TrainConfig, evaluate, evaluate_tta, train

__version__ = "0.1.0"

__all__ = [
    "CAMERAS", "HyperCube", "RawFrame", "WavelengthAxis", "calibrate",
    "AugmentationConfig", "LabelRecord",
    "ModelConfig", "build_hscnn", "build_model", "count_parameters",
    "EvalReport", "TrainConfig", "evaluate", "evaluate_tta", "train",
]
