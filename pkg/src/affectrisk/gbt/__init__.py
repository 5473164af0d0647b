from ._backend import BACKEND, compiled_available, get_kernels
from .model import (
    GbtHyperparams,
    Tree,
    TreeEnsemble,
    best_split,
    fit,
    gain_importance,
    predict,
)

__all__ = [
    "BACKEND",
    "GbtHyperparams",
    "Tree",
    "TreeEnsemble",
    "best_split",
    "compiled_available",
    "fit",
    "gain_importance",
    "get_kernels",
    "predict",
]
