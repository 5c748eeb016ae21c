"""Network-guided sparse regression for SNP mains and epistatic pairs."""

__version__ = "0.1.0"

from .data import Dataset, StandardizedDesign, standardize
from .solver import (
    CoefficientState,
    Inter,
    Main,
    Solution,
    SolverConfig,
    fit,
)
from .weights import WeightMatrix, build_adjacency, build_weights, from_pairs

__all__ = [
    "Dataset",
    "StandardizedDesign",
    "standardize",
    "CoefficientState",
    "Inter",
    "Main",
    "Solution",
    "SolverConfig",
    "fit",
    "WeightMatrix",
    "build_adjacency",
    "build_weights",
    "from_pairs",
    "__version__",
]
