"""Python bindings for the multi-modal multi-view fundus fusion core."""

from ._mrdf import (
    MrdfError,
    bleu,
    cider,
    classification_metrics,
    config_text,
    evaluate,
    flop_count,
    generate_dataset,
    gradcheck,
    rouge_l,
    shifted_window_mask,
    sw_msa,
    train,
)

__all__ = [
    "MrdfError",
    "bleu",
    "cider",
    "classification_metrics",
    "config_text",
    "evaluate",
    "flop_count",
    "generate_dataset",
    "gradcheck",
    "rouge_l",
    "shifted_window_mask",
    "sw_msa",
    "train",
]
