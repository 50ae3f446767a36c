"""Dimension-wise sparsity allocation for one-shot pruning.

Per-row sparsity targets for each layer are tuned iteratively from output
reconstruction quality, on top of pluggable importance scores.
"""
from .allocation import LayerAllocation, OwlParams, outlier_ratio, owl_allocate
from .errors import BudgetError, ContractError, FormatError, NumericalError, ShapeError
from .masking import ComparisonGroup, PruneMask, SparsityVector, apply_mask, build_mask, round_counts
from .optimizer import TrimConfig, TrimResult, lr_search, trim_adjust
from .pipeline import CalibrationSet, ScoreConfig, ToyModel, prune_model
from .quality import qmetric, qmetric_dimwise
from .scoring import score_gblm, score_magnitude, score_sparsegpt, score_wanda
from .tensor import Rng, TensorContainer, load_container, matmul, save_container

__all__ = [
    "BudgetError", "CalibrationSet", "ComparisonGroup", "ContractError", "FormatError",
    "LayerAllocation", "NumericalError", "OwlParams", "PruneMask", "Rng", "ScoreConfig",
    "ShapeError", "SparsityVector", "TensorContainer", "ToyModel", "TrimConfig", "TrimResult",
    "apply_mask", "build_mask", "load_container", "lr_search", "matmul", "outlier_ratio",
    "owl_allocate", "prune_model", "qmetric", "qmetric_dimwise", "round_counts",
    "save_container", "score_gblm", "score_magnitude", "score_sparsegpt", "score_wanda",
    "trim_adjust",
]
__version__ = "0.1.0"
