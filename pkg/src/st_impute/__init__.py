"""Sparse-attention transformer imputation for time series, in plain numpy."""

from .errors import ContractError, DataError, DegenerateRowError, NumericalError, ShapeError, StImputeError
from .model import ModelConfig, StImputeModel
from .training import TrainConfig, train

__all__ = [
    "ContractError", "DataError", "DegenerateRowError", "NumericalError", "ShapeError", "StImputeError",
    "ModelConfig", "StImputeModel", "TrainConfig", "train",
]
__version__ = "0.1.0"
