"""Hierarchical context transformer: python surface over the C++ core."""

from ._hct import (
    ConfigError,
    DataError,
    NumericError,
    UsageError,
    accuracy,
    average_precision,
    balanced_accuracy,
    cosine_warmup_lr,
    dataset_summary,
    gelu,
    generate_dataset,
    gradcheck,
    icl_pair_loss,
    iou,
    layer_norm,
    map_classification,
    multilabel_recall,
    patchify,
    pool_st,
    scaled_attention,
    softmax,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "UsageError",
    "accuracy",
    "average_precision",
    "balanced_accuracy",
    "cosine_warmup_lr",
    "dataset_summary",
    "gelu",
    "generate_dataset",
    "gradcheck",
    "icl_pair_loss",
    "iou",
    "layer_norm",
    "map_classification",
    "multilabel_recall",
    "patchify",
    "pool_st",
    "scaled_attention",
    "softmax",
]
