"""Minimal numpy neural-network engine."""

from .checkpoint import load, save
from .layers import (BatchNorm1d, Conv1d, Dense, Dropout, Flatten, Layer, ReLU,
                     Softmax, layer_from_config, softmax)
from .losses import cross_entropy, mse
from .network import EpochRecord, GradCheckResult, History, Sequential, fit, gradient_check
from .optim import Adam, PlateauMonitor, TrainConfig, early_stop, lr_on_plateau

__all__ = [
    "Adam", "BatchNorm1d", "Conv1d", "Dense", "Dropout", "EpochRecord", "Flatten", "GradCheckResult",
    "History", "Layer", "PlateauMonitor", "ReLU", "Sequential", "Softmax",
    "TrainConfig", "cross_entropy", "early_stop", "fit", "gradient_check",
    "layer_from_config", "load", "lr_on_plateau", "mse", "save", "softmax",
]
