"""Draft-verify recommendation loop and the comparison modes.

The main loop alternates drafting, likelihood verification, and one
level-masked beam-search step per iteration, guiding later draft batches
with the current beam prefixes. It exits as soon as enough candidates are
accepted; otherwise full-length beam sequences fill the remaining slots.
Also provided: plain beam-search generation, heuristic unseen mixing, the
subset-ranking fast path, and trie-constrained beam search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .catalog import Catalog
from .drafter import DraftStream
from .seqmodel import Beam, Scorer, beam_search, build_prefix_trie, chain_logprobs

ACCEPTED = "accepted"
BEAM_FILL = "beam_fill"
MIXED = "mixed"


@dataclass(frozen=True)
class SpecConfig:
    """Runtime knobs for one recommendation call."""

    k: int = 10
    draft_size: int = 50
    threshold: float = -1.6
    beam_width: int = 50
    guided: bool = True
    max_iterations: int | None = None  # defaults to the number of digits

    def __post_init__(self):
        if self.k < 1 or self.draft_size < 1 or self.beam_width < 1:
            raise ValueError("k, draft_size, and beam_width must be >= 1")
        if math.isnan(self.threshold):
            raise ValueError("threshold must be a number or +/-inf")


@dataclass(frozen=True)
class VerifiedCandidate:
    item: int
    score: float  # mean per-digit log-probability
    accepted: bool
    iteration: int


@dataclass(frozen=True)
class RecEntry:
    item: int
    score: float
    provenance: str  # ACCEPTED or BEAM_FILL


@dataclass
class RecommendationList:
    entries: list[RecEntry] = field(default_factory=list)
    iterations_used: int = 0
    decode_steps_used: int = 0
    complete: bool = True
    # (drafted, accepted) per draft-verify iteration, for instrumentation
    iteration_stats: list[tuple[int, int]] = field(default_factory=list)
    # (prefix_set or None, drafted batch) per iteration, for audits
    draft_trace: list[tuple[set | None, list[int]]] = field(default_factory=list)

    @property
    def items(self) -> list[int]:
        return [e.item for e in self.entries]


def verify(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    candidates: list[int],
    catalog: Catalog,
    threshold: float,
    iteration: int = 0,
) -> list[VerifiedCandidate]:
    """Score candidates by the mean log-probability of their semantic digits.

    The identification digit is excluded for items unseen in training, since
    its counter carries no semantics the model could have learned.
    """
    layout = catalog.layout
    out = []
    for item in candidates:
        digits = catalog.semantic_id(item)
        tokens = layout.digits_to_tokens(digits)
        logps = chain_logprobs(scorer, x_tokens, tokens)
        if catalog.seen_in_training[item]:
            score = sum(logps) / len(logps)
        else:
            score = sum(logps[:-1]) / (len(logps) - 1)
        out.append(
            VerifiedCandidate(item, score, accepted=score > threshold, iteration=iteration)
        )
    return out


def _sorted_accepted(pool: list[VerifiedCandidate]) -> list[VerifiedCandidate]:
    return sorted(pool, key=lambda v: (-v.score, v.item))


def _fill_from_beams(
    beams: list[Beam],
    catalog: Catalog,
    taken: set[int],
    budget: int,
    allowed: set[int] | None = None,
) -> list[RecEntry]:
    entries = []
    for beam in beams:
        if budget <= 0:
            break
        item = catalog.item_for_semantic_id(beam.digits(catalog.layout))
        if item is None or item in taken:
            continue
        if allowed is not None and item not in allowed:
            continue
        entries.append(RecEntry(item, beam.score, BEAM_FILL))
        taken.add(item)
        budget -= 1
    return entries


def recommend(
    scorer: Scorer,
    stream: DraftStream,
    x_tokens: tuple[int, ...],
    catalog: Catalog,
    config: SpecConfig,
    beam_fill_subset: set[int] | None = None,
) -> RecommendationList:
    """Run the draft-verify loop and return the ranked recommendation list.

    Accepted candidates are ordered by verification score (ties by internal
    index) and always precede beam-fill entries, which keep beam-score order.
    The two score scales are never merged.
    """
    layout = catalog.layout
    num_digits = layout.num_levels
    max_iters = config.max_iterations or num_digits
    max_iters = min(max_iters, num_digits)

    result = RecommendationList()
    pool: list[VerifiedCandidate] = []
    beams: list[Beam] = [Beam((), 0.0)]
    early_exit = False

    for j in range(1, max_iters + 1):
        if config.guided and j >= 2:
            prefix_set = {b.digits(layout) for b in beams}
        else:
            prefix_set = None
        batch = stream.next_batch(config.draft_size, prefix_set)
        result.draft_trace.append((prefix_set, batch))
        verified = verify(scorer, x_tokens, batch, catalog, config.threshold, j)
        accepted_now = [v for v in verified if v.accepted]
        pool.extend(accepted_now)
        result.iteration_stats.append((len(batch), len(accepted_now)))
        result.iterations_used = j
        if len(pool) >= config.k:
            early_exit = True
            break
        beams = beam_search(
            scorer, x_tokens, layout, config.beam_width, steps=j, start_beams=beams
        )
        result.decode_steps_used += 1
        if not beams and stream.exhausted():
            break

    ranked = _sorted_accepted(pool)[: config.k]
    taken = {v.item for v in ranked}
    result.entries = [RecEntry(v.item, v.score, ACCEPTED) for v in ranked]
    if not early_exit and len(result.entries) < config.k:
        full = [b for b in beams if len(b.tokens) == num_digits]
        result.entries.extend(
            _fill_from_beams(
                full, catalog, taken, config.k - len(result.entries), beam_fill_subset
            )
        )
    result.complete = len(result.entries) >= config.k
    return result


def beam_only_recommend(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    beam_width: int,
    k: int,
    catalog: Catalog,
) -> RecommendationList:
    """Pure autoregressive generation baseline: decode, parse, truncate."""
    if beam_width < k:
        raise ValueError("beam width must be >= k")
    layout = catalog.layout
    beams = beam_search(scorer, x_tokens, layout, beam_width, steps=layout.num_levels)
    result = RecommendationList(decode_steps_used=layout.num_levels)
    result.entries = _fill_from_beams(beams, catalog, set(), k)
    result.complete = len(result.entries) >= k
    return result


def heuristic_mix_recommend(
    scorer: Scorer,
    stream: DraftStream,
    x_tokens: tuple[int, ...],
    beam_width: int,
    k: int,
    unseen_fraction: float,
    catalog: Catalog,
) -> RecommendationList:
    """Generation baseline with a fixed share of unseen items mixed at the tail."""
    if not 0.0 <= unseen_fraction <= 1.0:
        raise ValueError("unseen_fraction must lie in [0, 1]")
    n_unseen = int(unseen_fraction * k)
    n_beam = k - n_unseen
    result = RecommendationList(decode_steps_used=catalog.layout.num_levels)
    taken: set[int] = set()
    if n_beam > 0:
        base = beam_only_recommend(scorer, x_tokens, beam_width, min(n_beam, beam_width), catalog)
        result.entries = list(base.entries[:n_beam])
        taken = set(e.item for e in result.entries)
    appended = 0
    while appended < n_unseen:
        batch = stream.next_batch(n_unseen)
        if not batch:
            break
        for item in batch:
            if item in taken or catalog.seen_in_training[item]:
                continue
            result.entries.append(RecEntry(item, stream.similarities[item], MIXED))
            taken.add(item)
            appended += 1
            if appended == n_unseen:
                break
    result.complete = len(result.entries) >= k
    return result


def subset_rank(
    scorer: Scorer,
    stream: DraftStream,
    x_tokens: tuple[int, ...],
    subset: set[int],
    catalog: Catalog,
    config: SpecConfig,
) -> RecommendationList:
    """Draft-verify loop restricted to ``subset``; outputs never leave it.

    The caller must have opened ``stream`` with the same subset filter.
    """
    return recommend(scorer, stream, x_tokens, catalog, config, beam_fill_subset=subset)


def constrained_beam_rank(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    subset: set[int],
    beam_width: int,
    k: int,
    catalog: Catalog,
) -> RecommendationList:
    """Subset ranking via beam search masked by a trie of allowed prefixes."""
    layout = catalog.layout
    trie = build_prefix_trie([catalog.semantic_id(i) for i in sorted(subset)])
    beams = beam_search(
        scorer, x_tokens, layout, beam_width, steps=layout.num_levels, trie=trie
    )
    result = RecommendationList(decode_steps_used=layout.num_levels)
    result.entries = _fill_from_beams(beams, catalog, set(), k, allowed=subset)
    result.complete = len(result.entries) >= min(k, len(subset))
    return result


def batch_score_rank(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    subset: set[int],
    k: int,
    catalog: Catalog,
    batch_size: int = 50,
) -> RecommendationList:
    """Subset ranking by scoring every member in fixed-size batches."""
    items = sorted(subset)
    scored: list[VerifiedCandidate] = []
    for start in range(0, len(items), batch_size):
        scored.extend(
            verify(scorer, x_tokens, items[start : start + batch_size], catalog, -math.inf)
        )
    ranked = _sorted_accepted(scored)[:k]
    result = RecommendationList()
    result.entries = [RecEntry(v.item, v.score, ACCEPTED) for v in ranked]
    result.complete = len(result.entries) >= min(k, len(subset))
    return result
