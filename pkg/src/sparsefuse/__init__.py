"""Sparse LiDAR injection into a monocular depth network, at desk scale.

Pure numpy with numba kernels for the hot loops; set
``SPARSEFUSE_DISABLE_NUMBA=1`` to run the numpy fallback instead.
"""
from .backbone import DepthModel, ModelConfig
from .errors import ConfigurationError, DataError, DegenerateInputError, NumericAbort
from .evaluator import ablation_sweep, stratified_eval
from .kernels import BACKEND
from .losses import LossWeights, total_loss
from .scene_gen import make_split
from .sparsifier import SparseDepth, bilinear_densify, sample_mask, sparsify
from .trainer import TrainConfig, grad_check, train, train_pair

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigurationError", "DataError", "DegenerateInputError", "DepthModel",
    "LossWeights", "ModelConfig", "NumericAbort", "SparseDepth", "TrainConfig",
    "ablation_sweep", "bilinear_densify", "grad_check", "make_split", "sample_mask",
    "sparsify", "stratified_eval", "total_loss", "train", "train_pair",
]
