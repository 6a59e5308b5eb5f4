"""Datasets, evaluation, the grid-search reference and the command line."""
from .config import ConfigError, RunConfig
from .dataset import Dataset
from .metrics import EvalReport, evaluate
from .oracle import oracle_wsr

__all__ = ["ConfigError", "Dataset", "EvalReport", "RunConfig", "evaluate", "oracle_wsr"]
