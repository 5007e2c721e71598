"""End-to-end wiring: fit a catalog, scorer, and draft index from raw data.

Everything here is deterministic for a fixed seed: codebooks are fit on the
embeddings of items seen in training, semantic IDs are assigned to the whole
catalog in internal-index order, and the n-gram scorer is counted from the
pre-cut-off interaction stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, Codebooks, fit_codebooks
from .drafter import AUXILIARY, DraftIndex, build_index, open_stream
from .engine import RecommendationList, SpecConfig, recommend
from .evals import Interaction
from .seqmodel import NGramScorer, build_token_sequence, fit_ngram
from .tokens import TokenLayout


@dataclass
class Bundle:
    layout: TokenLayout
    catalog: Catalog
    scorer: NGramScorer
    index: DraftIndex
    mode: str


def training_sequences(
    log: list[Interaction], catalog: Catalog, t_valid: int
) -> list[tuple[int, ...]]:
    """One token sequence per user over their pre-cut-off interactions."""
    by_user: dict[str, list[Interaction]] = {}
    for r in log:
        if r.ts < t_valid and r.item in catalog._index_of:
            by_user.setdefault(r.user, []).append(r)
    seqs = []
    for recs in by_user.values():
        recs.sort(key=lambda r: (r.ts, r.item))
        items = [catalog.index_of(r.item) for r in recs]
        if items:
            seqs.append(build_token_sequence(items, catalog, max_items=len(items)))
    return seqs


def fit_bundle(
    item_ids: list[str],
    embeddings: np.ndarray,
    log: list[Interaction],
    t_valid: int,
    num_levels: int = 4,
    codebook_size: int = 32,
    order: int | None = None,
    smoothing: float = 0.1,
    dim: int = 32,
    seed: int = 0,
    mode: str = AUXILIARY,
) -> Bundle:
    layout = TokenLayout(num_levels=num_levels, codebook_size=codebook_size)
    train_items = {r.item for r in log if r.ts < t_valid}
    seen = np.array([ext in train_items for ext in item_ids])
    emb = np.asarray(embeddings, dtype=np.float64)
    codebooks = fit_codebooks(
        emb[seen], levels=num_levels - 1, codebook_size=codebook_size, seed=seed
    )
    # register training items first so they hold the low collision counters;
    # new items are tokenized afterwards against the frozen codebooks
    order_idx = [i for i in range(len(item_ids)) if seen[i]] + [
        i for i in range(len(item_ids)) if not seen[i]
    ]
    catalog = Catalog.build(
        [item_ids[i] for i in order_idx],
        emb[order_idx],
        seen[order_idx],
        layout,
        codebooks,
    )
    seqs = training_sequences(log, catalog, t_valid)
    scorer = fit_ngram(
        seqs,
        layout,
        order=order if order is not None else 2 * num_levels,
        smoothing=smoothing,
        dim=dim,
        seed=seed,
    )
    index = build_index(catalog, mode, scorer)
    return Bundle(layout, catalog, scorer, index, mode)


def recommend_for_history(
    bundle: Bundle,
    history: list[int],
    config: SpecConfig,
    exclude_history: bool = True,
    subset: set[int] | None = None,
) -> RecommendationList:
    """One full draft-verify run for an internal-index item history."""
    x_tokens = build_token_sequence(history, bundle.catalog)
    stream = open_stream(
        bundle.index,
        bundle.catalog,
        history,
        x_tokens=x_tokens,
        scorer=bundle.scorer,
        exclude=set(history) if exclude_history else None,
        subset=subset,
    )
    return recommend(
        bundle.scorer, stream, x_tokens, bundle.catalog, config, beam_fill_subset=subset
    )
