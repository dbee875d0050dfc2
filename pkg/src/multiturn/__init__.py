"""Multi-turn dialogue contrastive learning engine.

A desk-scale implementation of multi-turn contrastive training: dialogue
templating and packing, a gradient-verified causal encoder, the masked
multi-pair InfoNCE loss family, a FLOPs cost model, and a data synthesis
pipeline.
"""

from .core import (
    EmbeddingMatrix,
    LossConfig,
    MultiTurnSample,
    Role,
    RowLabel,
    TaskTag,
    TurnPair,
    Variant,
    validate_batch,
)
from .contrast import (
    LossReport,
    MaskedLogitSpec,
    PairKind,
    build_mask_finetune,
    build_mask_from_labels,
    build_mask_pretrain,
    effective_negatives,
    gradcheck_embeddings,
    multiturn_infonce,
    naive_multipair_loss,
    single_turn_infonce,
)
from .costmodel import (
    REFERENCE_SCALING_ROWS,
    CostConfig,
    ScalingRow,
    efficiency_ratio,
    fit_scaling,
    iteration_cost,
)
from .encoder import EncoderConfig, EncoderState, init as init_encoder
from .harness import (
    EvalReport,
    LossVariant,
    TrainConfig,
    compare_scaling,
    evaluate,
    make_separable_corpus,
    train,
)
from .template import (
    AttentionMode,
    ByteTokenizer,
    ChatMarkup,
    PackedSequence,
    PromptConfig,
    TemplateVariant,
    build_adapted_pair,
    mask_words,
    pack_multiturn,
    shuffle_turns,
)

__version__ = "0.1.0"
