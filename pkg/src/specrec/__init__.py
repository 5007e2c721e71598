"""Speculative draft-verify recommendation over semantic-ID catalogs."""

from .catalog import (
    Catalog,
    Codebooks,
    assign_semantic_id,
    fit_codebooks,
    read_embedding_file,
    write_embedding_file,
)
from .drafter import AUXILIARY, SELF, DraftIndex, DraftStream, build_index, open_stream
from .engine import (
    RecommendationList,
    SpecConfig,
    VerifiedCandidate,
    batch_score_rank,
    beam_only_recommend,
    constrained_beam_rank,
    heuristic_mix_recommend,
    recommend,
    subset_rank,
    verify,
)
from .errors import CapabilityError, CapacityError, CodebookError, FormatError, SpecRecError
from .evals import (
    EvalCase,
    EvalReport,
    Interaction,
    bench_subset_latency,
    evaluate,
    generate_synthetic,
    load_interactions,
    ndcg_at_k,
    recall_at_k,
    save_interactions,
    temporal_split,
)
from .runtime import Bundle, fit_bundle, recommend_for_history
from .seqmodel import (
    Beam,
    NGramScorer,
    Scorer,
    beam_search,
    build_prefix_trie,
    build_token_sequence,
    chain_logprobs,
    encode_sequence,
    fit_ngram,
)
from .tokens import BOS, EOS, TokenLayout

__version__ = "0.1.0"
