"""Transformer encoder with role-guided attention heads.

Attention heads are constrained by additive {0, -inf} masks derived from
five linguistic roles (rare words, separators, dependency syntax, major
syntactic relations, relative position); the remaining heads stay regular.
The package bundles the mask-construction pipeline, a small float64
autodiff engine, a training harness with a drop-one-role ablation runner,
and a CLI (``guided-attn``).
"""

from .attention import HeadConfig, HeadWeights, masked_attention, multi_head, scaled_dot_attention
from .autodiff import Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    Batch,
    Sentence,
    Token,
    Vocabulary,
    build_vocab,
    load_corpus,
    make_batches,
    parse_conllu,
    rare_token_indices,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ConlluError,
    DegenerateRowError,
    GuidedAttentionError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .harness import AblationReport, DatasetSplits, ExperimentSpec, emit_metrics, run_ablation, run_grid
from .masks import (
    GUIDED_ROLES,
    RoleMask,
    apply_fallback,
    combine,
    dep_syntax_mask,
    major_relations_mask,
    padding_mask,
    rare_words_mask,
    relative_position_mask,
    separator_mask,
)
from .model import Checkpoint, EvalMetrics, ModelConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AblationReport", "Batch", "Checkpoint", "CheckpointError", "ConfigError",
    "ConlluError", "DatasetSplits", "DegenerateRowError", "EvalMetrics",
    "ExperimentSpec", "GUIDED_ROLES", "GuidedAttentionError", "HeadConfig",
    "HeadWeights", "ModelConfig", "RoleMask", "Sentence", "ShapeMismatchError",
    "Tensor", "Token", "TrainingDivergedError", "Vocabulary", "apply_fallback",
    "backward", "build_vocab", "combine", "dep_syntax_mask", "emit_metrics",
    "evaluate", "load_checkpoint", "load_corpus", "major_relations_mask",
    "make_batches", "masked_attention", "multi_head", "padding_mask",
    "parse_conllu", "rare_token_indices", "rare_words_mask",
    "relative_position_mask", "run_ablation", "run_grid", "save_checkpoint",
    "scaled_dot_attention", "separator_mask", "train",
]
