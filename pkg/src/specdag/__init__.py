"""Speculative decoding with sequence-, tree-, and graph-structured drafting."""

from .analysis import (
    OverlapStats,
    RunMetrics,
    aggregate_overlap,
    child_position_acceptance,
    compute_metrics,
    merge_kl_study,
    modeled_cost,
    modeled_speedup,
    ngram_overlap,
)
from .config import DraftConfig
from .distributions import (
    Distribution,
    accept_prob,
    argmax_token,
    kl_divergence,
    residual_distribution,
    sample_token,
    total_variation,
    transform,
)
from .drafting import (
    DraftStageResult,
    ForwardEvent,
    detect_and_merge,
    draft_ssd,
    expand_frontier,
    run_draft_stage,
    select_children,
)
from .errors import (
    DegenerateDistributionError,
    InputTooLongError,
    InvalidMaskError,
    ModelMismatchError,
    SpecDagError,
    TraceFormatError,
)
from .graph import (
    DraftNode,
    FlattenedBatch,
    Hypothesis,
    NodeStatus,
    TokenGraph,
    flatten,
    max_node_count,
    trailing_ngram,
    unmerge,
)
from .models import (
    ForwardCost,
    KVCacheState,
    LanguageModel,
    NGramModel,
    ScriptedModel,
    load_ngram,
    save_ngram,
    train_ngram,
)
from .session import SessionResult, StageRecord, decode_session, session_rng
from .verification import (
    VerificationResult,
    commit,
    verify_deterministic,
    verify_stochastic,
)
from .vocab import Vocabulary, build_vocabulary, byte_tokenize, whitespace_tokenize

__version__ = "0.1.0"
