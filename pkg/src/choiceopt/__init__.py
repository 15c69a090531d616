"""Multinomial logit estimation with deterministic, adaptive-batch and hybrid optimizers."""
from .amabs import AmabsConfig, AmabsState
from .data_io import (SyntheticSpec, generate_synthetic, load_csv, make_problem,
                      parse_model_spec, write_csv)
from .model import Batch, ChoiceModel, Dataset, Evaluation, ModelSpec, Term
from .optimizers import (ALGORITHM_NAMES, OptimizationResult, OptimizerConfig, run,
                         standard_errors)

__all__ = [
    "ALGORITHM_NAMES", "AmabsConfig", "AmabsState", "Batch", "ChoiceModel", "Dataset",
    "Evaluation", "ModelSpec", "OptimizationResult", "OptimizerConfig", "SyntheticSpec",
    "Term", "generate_synthetic", "load_csv", "make_problem", "parse_model_spec", "run",
    "standard_errors", "write_csv",
]
