"""Zero-shot cross-lingual dialogue generation at desk scale.

Dialogue corpora in a source language are augmented into code-switching and
pseudo-target views through a bilingual lexicon; an encoder-decoder is
trained with a contrastive objective over the mutually positive views plus
teacher-forced generation loss, and responses are beam-decoded in the
target language with placeholder re-prediction.
"""

from .corpus import (
    CLS,
    MASK,
    PAD,
    SEP,
    TURN,
    UNK,
    CODE_SWITCH_TAG,
    PSEUDO_TARGET_TAG,
    LANGUAGE_TAGS,
    Corpus,
    DialogueExample,
    LanguageTag,
    TokenizerSpec,
    attach_language_tag,
    build_vocabulary,
    detokenize,
    load_config,
    load_corpus,
    make_example,
    save_corpus,
    split_text,
    strip_language_tag,
    tokenize,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    DegenerateInputError,
    DoubleTagError,
    NonFiniteLossError,
    ParseError,
    ShapeMismatchError,
)
from .generation import (
    BeamCandidate,
    ExternalMLMFiller,
    GenerationConfig,
    IdentityFiller,
    MaskFiller,
    UnigramFrequencyFiller,
    beam_search,
    fill_placeholders,
    generate_responses,
    placeholder_ratio,
)
from .lexicon import (
    BilingualLexicon,
    CoverageReport,
    coverage,
    load_lexicon,
    lookup,
    make_lexicon,
)
from .losses import (
    LossBreakdown,
    generation_loss,
    negative_contrast,
    positive_alignment,
    sequence_nll,
    total_loss,
)
from .metrics import (
    ComparisonReport,
    MetricsReport,
    WordVectorTable,
    bleu_n,
    compute_report,
    distinct_n,
    embedding_metric,
    perplexity,
    rouge_l,
    zero_sup_percentage,
)
from .model import (
    DecoderDistribution,
    EncoderOutput,
    ModelConfig,
    Seq2SeqModel,
    gumbel_sample,
    init_from_mlm,
    load_checkpoint,
    pool_history,
    save_checkpoint,
    soft_response_repr,
)
from .switching import (
    SwitchConfig,
    View,
    ViewSet,
    build_views,
    code_switch_pass,
    pseudo_target_pass,
)
from .training import (
    Batch,
    FitResult,
    TrainConfig,
    build_batch,
    compute_losses,
    fit,
    train_step,
    validation_perplexity,
)

__version__ = "0.1.0"
