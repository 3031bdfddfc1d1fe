"""Python bindings for the crayon C++ core."""

from ._core import (
    ConvNet,
    Dataset,
    SynthSpec,
    aggregate_pair,
    bg_gap,
    generate_synthetic,
    group_metrics,
    load_dataset,
    loss_irrel,
    loss_pred,
    loss_rel,
    make_mixed_sets,
    model_group_metrics,
    oracle_annotate,
    refine_with_oracle,
    saliency_maps,
    save_dataset,
    train_original,
)

__all__ = [
    "ConvNet",
    "Dataset",
    "SynthSpec",
    "aggregate_pair",
    "bg_gap",
    "generate_synthetic",
    "group_metrics",
    "load_dataset",
    "loss_irrel",
    "loss_pred",
    "loss_rel",
    "make_mixed_sets",
    "model_group_metrics",
    "oracle_annotate",
    "refine_with_oracle",
    "saliency_maps",
    "save_dataset",
    "train_original",
]
