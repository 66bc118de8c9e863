"""Contrastive continual pretraining with hidden-state augmentation and
curriculum-scheduled noise levels."""

from .augment import (
    AugmentationLevel,
    AugmentHook,
    EigenBasis,
    FixedAugmentHook,
    JitterDraw,
    augment,
    compute_eigenbasis,
    draw_jitter,
    pca_jitter,
    sample_hook_layer,
    span_cutoff,
)
from .contrastive import (
    ContrastiveBatch,
    LossReport,
    ProjectionHead,
    combined_loss,
    cosine_sim,
    nt_xent_loss,
    nt_xent_loss_and_grad,
    project,
)
from .corpus import (
    Document,
    MaskedSequence,
    TokenSequence,
    Vocabulary,
    apply_mlm_mask,
    generate_toy_corpus,
    load_corpus,
    sample_anchor,
)
from .curriculum import CurriculumPolicy, level_at, level_menu
from .encoder import (
    EncoderConfig,
    HiddenStates,
    SequenceEmbedding,
    TransformerEncoder,
    load_checkpoint,
    mean_pool,
    save_checkpoint,
)
from .errors import ConfigError, CorpusError, EffclError, NumericalError
from .trainer import (
    TRACE_HEADER,
    AdamW,
    LossTraceRow,
    TrainConfig,
    Trainer,
    clip_gradients,
    compare_curricula,
    run_pretraining,
    slanted_triangular_lr,
)

__version__ = "0.1.0"
