"""Emotion recognition from ECG and EEG: filters, masks, models and evaluation."""

from ._physiofuse import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    LoadError,
    Model,
    butterworth,
    confusion_metrics,
    evaluate,
    filter_signal,
    generate_synthetic,
    gradcheck,
    make_folds,
    receptive_field,
    sample_mask,
    t_interval,
    t_quantile,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "LoadError",
    "Model",
    "butterworth",
    "confusion_metrics",
    "evaluate",
    "filter_signal",
    "generate_synthetic",
    "gradcheck",
    "make_folds",
    "receptive_field",
    "sample_mask",
    "t_interval",
    "t_quantile",
]
