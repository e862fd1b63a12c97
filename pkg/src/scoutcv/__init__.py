"""Rookie talent classification pipeline.

Frozen-backbone feature extraction, trainable dense classification heads,
stratified k-fold cross-validation, and per-class prediction-quality
evaluation with talent-weighted model selection.
"""

from scoutcv.dataset import (
    ClassHistogram,
    DatasetManifest,
    FoldPlan,
    PlayerRecord,
    QualityClass,
    balance_truncate,
    class_histogram,
    load_manifest,
    split_kfold,
)
from scoutcv.evaluate import (
    ConfusionMatrix,
    EvaluationReport,
    SelectionPolicy,
    accuracy,
    confusion,
    cpq,
    cross_validate,
    select_best,
)
from scoutcv.head import (
    HeadConfig,
    HeadModel,
    TrainConfig,
    TrainHistory,
    init_head,
    predict,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ClassHistogram",
    "ConfusionMatrix",
    "DatasetManifest",
    "EvaluationReport",
    "FoldPlan",
    "HeadConfig",
    "HeadModel",
    "PlayerRecord",
    "QualityClass",
    "SelectionPolicy",
    "TrainConfig",
    "TrainHistory",
    "accuracy",
    "balance_truncate",
    "class_histogram",
    "confusion",
    "cpq",
    "cross_validate",
    "init_head",
    "load_manifest",
    "predict",
    "select_best",
    "split_kfold",
    "train",
]
