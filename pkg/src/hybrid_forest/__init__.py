"""Streaming Hoeffding trees, weak-learner forests and the hybrid forest."""

from .core import FeatureSpec, Instance, Prediction, RunConfig, Schema, validate_instance
from .forest import (HybridForest, RandomForest, SingleTree, combine_classification, combine_regression,
                     confidence, generate_bags, min_learners_for_confidence, weak_learner_feature_count)
from .hoeffding import HoeffdingRegressionTree, HoeffdingTree, hoeffding_epsilon
from .eval import MetricConfig, aggregate_runs, convergence_index, run_prequential

__version__ = "0.1.0"
