"""Inductive candidate drafting via exact cosine similarity search.

The drafter ranks every eligible catalog item (including items unseen in
training) against a query vector built from the user history: the mean of
history item vectors in auxiliary mode, or the scorer's own sequence
encoding in self mode. Draft batches are consumed through a stream that
never re-proposes an item; items skipped under one prefix filter remain
eligible for later batches under different prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, _l2_normalize
from .errors import CapabilityError
from .seqmodel import BOS, EOS, Scorer, encode_sequence

AUXILIARY = "auxiliary"
SELF = "self"


@dataclass
class DraftIndex:
    """L2-normalized item vectors, row order = internal item indices."""

    mode: str
    vectors: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _item_tokens(catalog: Catalog, item: int) -> tuple[int, ...]:
    digits = catalog.semantic_id(item)
    return (BOS,) + catalog.layout.digits_to_tokens(digits) + (EOS,)


def build_index(catalog: Catalog, mode: str, scorer: Scorer | None = None) -> DraftIndex:
    """Build the drafting index over all catalog items."""
    if mode == AUXILIARY:
        return DraftIndex(mode, _l2_normalize(np.asarray(catalog.embeddings)))
    if mode == SELF:
        if scorer is None or not getattr(scorer, "can_encode", False):
            raise CapabilityError("self mode requires a scorer with encode capability")
        rows = [encode_sequence(scorer, _item_tokens(catalog, i)) for i in range(len(catalog))]
        return DraftIndex(mode, np.vstack(rows))
    raise ValueError(f"unknown drafting mode {mode!r}")


def query_vector(
    index: DraftIndex,
    catalog: Catalog,
    history: list[int],
    x_tokens: tuple[int, ...] | None = None,
    scorer: Scorer | None = None,
) -> np.ndarray:
    """Auxiliary mode: normalized mean of history item vectors.
    Self mode: the scorer's encoding of the full input sequence."""
    if index.mode == AUXILIARY:
        vec = index.vectors[history].mean(axis=0)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec
    if x_tokens is None or scorer is None:
        raise ValueError("self mode needs the token sequence and scorer")
    return encode_sequence(scorer, x_tokens)


class DraftStream:
    """Single-consumer descending-similarity ranking with filters.

    The full ranking is fixed at open time. ``next_batch`` walks it in order,
    yielding items that pass the active prefix filter and marking only those
    as consumed; non-matching items stay eligible for later batches.
    """

    def __init__(
        self,
        index: DraftIndex,
        catalog: Catalog,
        query: np.ndarray,
        exclude: set[int] | None = None,
        subset: set[int] | None = None,
    ):
        self.catalog = catalog
        sims = index.vectors @ query
        order = np.lexsort((np.arange(len(sims)), -sims))
        exclude = exclude or set()
        self.ranking = [
            int(i)
            for i in order
            if i not in exclude and (subset is None or i in subset)
        ]
        self.similarities = {int(i): float(sims[i]) for i in self.ranking}
        self._consumed: set[int] = set()

    def next_batch(
        self,
        size: int,
        prefix_set: set[tuple[int, ...]] | None = None,
    ) -> list[int]:
        """Next up-to-``size`` unconsumed items matching the prefix filter."""
        if size < 1:
            raise ValueError("batch size must be >= 1")
        if prefix_set is not None and prefix_set:
            lengths = {len(p) for p in prefix_set}
            if len(lengths) != 1:
                raise ValueError("prefixes must share one length")
            (plen,) = lengths
        batch: list[int] = []
        for item in self.ranking:
            if item in self._consumed:
                continue
            if prefix_set is not None:
                if not prefix_set:
                    break
                if self.catalog.semantic_id(item)[:plen] not in prefix_set:
                    continue
            batch.append(item)
            self._consumed.add(item)
            if len(batch) == size:
                break
        return batch

    def exhausted(self) -> bool:
        return len(self._consumed) >= len(self.ranking)


def open_stream(
    index: DraftIndex,
    catalog: Catalog,
    history: list[int],
    x_tokens: tuple[int, ...] | None = None,
    scorer: Scorer | None = None,
    exclude: set[int] | None = None,
    subset: set[int] | None = None,
) -> DraftStream:
    query = query_vector(index, catalog, history, x_tokens, scorer)
    return DraftStream(index, catalog, query, exclude=exclude, subset=subset)
