# SPDX-License-Identifier: Apache-2.0
"""Distantly supervised named entity recognition.

Thin Python layer over the C++ core: losses, soft labels, span evaluation,
gazetteer labeling, augmentation, recipes and the staged training pipeline.
"""

from ._core import (
    ConfigError,
    Error,
    MissingArtifactError,
    Tagger,
    augment,
    ce_loss,
    decode_entities,
    distant_label,
    encode_entities,
    evaluate,
    gce_loss,
    kl_divergence,
    load_recipe,
    mae_loss,
    recipe_hash,
    run_all,
    run_stage,
    score,
    soft_labels,
    synthetic_benchmark,
)

STAGES = (
    "synth-bench",
    "distant-label",
    "train-robust",
    "distill",
    "augment",
    "self-train",
    "evaluate",
)

__all__ = [
    "ConfigError",
    "Error",
    "MissingArtifactError",
    "STAGES",
    "Tagger",
    "augment",
    "ce_loss",
    "decode_entities",
    "distant_label",
    "encode_entities",
    "evaluate",
    "gce_loss",
    "kl_divergence",
    "load_recipe",
    "mae_loss",
    "recipe_hash",
    "run_all",
    "run_stage",
    "score",
    "soft_labels",
    "synthetic_benchmark",
]
