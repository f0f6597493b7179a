"""Gradient-boosted trees adapted by the cluster quality of their SHAP explanation space."""

from .clustering import ClusterAssignment, ClusterQuality, dbscan, silhouette
from .data import Dataset, RawSeries, featurize, load_csv, preprocess, time_split
from .embedding import Embedding2D, EmbeddingConfig, embed_2d
from .gbdt import ForestModel, Hyperparameters, fit, predict
from .refiner import ExplanationConfig, ScalConfig, compare, explanation_space, refine
from .rules import RuleConfig, mine_rules
from .synth import SyntheticShiftSpec
from .treeshap import ShapMatrix, shap_values
from .tuning import tune

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment", "ClusterQuality", "Dataset", "Embedding2D", "EmbeddingConfig",
    "ExplanationConfig", "ForestModel", "Hyperparameters", "RawSeries", "RuleConfig",
    "ScalConfig", "ShapMatrix", "SyntheticShiftSpec", "compare", "dbscan", "embed_2d",
    "explanation_space", "featurize", "fit", "load_csv", "mine_rules", "predict",
    "preprocess", "refine", "shap_values", "silhouette", "time_split", "tune",
]
