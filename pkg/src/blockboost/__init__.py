"""Gradient boosted regression trees over sorted column blocks.

The package trains additive tree ensembles with a second-order objective,
supports exact, quantile-approximate and sparsity-aware split finding, and
can stream compressed column blocks from disk when the data does not fit
in memory.
"""

from .data import DataMatrix, DatasetStats, parse_libsvm, serialize_libsvm, split_holdout
from .objective import GradientPairs, Loss, RegParams, gradients, leaf_weight, split_gain, structure_score
from .sketch import WeightedQuantileSummary, merge, prune, query, summary_from_points
from .trainer import TrainConfig, TreeEnsemble, load_model, predict, save_model, train

__all__ = [
    "DataMatrix",
    "DatasetStats",
    "GradientPairs",
    "Loss",
    "RegParams",
    "TrainConfig",
    "TreeEnsemble",
    "WeightedQuantileSummary",
    "gradients",
    "leaf_weight",
    "load_model",
    "merge",
    "parse_libsvm",
    "predict",
    "prune",
    "query",
    "save_model",
    "serialize_libsvm",
    "split_gain",
    "split_holdout",
    "structure_score",
    "summary_from_points",
    "train",
]
