"""Broadcast tensor regression: scalar responses on tensor covariates via
low-rank sums of broadcast one-dimensional spline effects."""

from .dataset import Dataset, load_dataset, minmax_rescale, save_dataset
from .estimator import BroadcastTensorRegressor
from .model import BroadcastModel, identifiability_check, load_model, save_model
from .solver import FitConfig, FitResult, fit, initialize
from .splines import SplineBasis, default_knots
from .synth import CaseSpec, GroundTruth, default_masks, generate_case, ise
from .tensor_ops import CPFactors, cp_compose, inner_product, khatri_rao, mode_matricize
from .tuning import GridSpec, grid_search, split_dataset, validation_error

__version__ = "0.1.0"

__all__ = [
    "BroadcastModel",
    "BroadcastTensorRegressor",
    "CPFactors",
    "CaseSpec",
    "Dataset",
    "FitConfig",
    "FitResult",
    "GridSpec",
    "GroundTruth",
    "SplineBasis",
    "cp_compose",
    "default_knots",
    "default_masks",
    "fit",
    "generate_case",
    "grid_search",
    "identifiability_check",
    "initialize",
    "inner_product",
    "ise",
    "khatri_rao",
    "load_dataset",
    "load_model",
    "minmax_rescale",
    "mode_matricize",
    "save_dataset",
    "save_model",
    "split_dataset",
    "validation_error",
]
