"""Unsupervised Raven-style matrix solving via pairwise relation discrimination."""

__version__ = "0.1.0"

from .dataset_io import PreprocessProfile, load_portable, save_portable
from .evaluation import EvalReport, evaluate, score_candidates, solve
from .generator import GeneratorConfig, generate_problems, verify_rules
from .problems import Configuration, RpmProblem, split_folds
from .training import TrainConfig, load_model, train

__all__ = [
    "Configuration",
    "EvalReport",
    "GeneratorConfig",
    "PreprocessProfile",
    "RpmProblem",
    "TrainConfig",
    "__version__",
    "evaluate",
    "generate_problems",
    "load_model",
    "load_portable",
    "save_portable",
    "score_candidates",
    "solve",
    "split_folds",
    "train",
    "verify_rules",
]
