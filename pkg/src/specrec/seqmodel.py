"""Autoregressive scorer contract, n-gram surrogate, and beam search.

The sequence model consumes flat token streams: ``[bos, item digits ...,
eos]`` with one token per semantic-ID digit (see :mod:`specrec.tokens`).
The n-gram surrogate stands in for a neural generative recommender: it is
exact, fast, and deterministic, which keeps the engine's oracle tests
exact. Next-token distributions use recursive additive smoothing with the
lower-order distribution as the prior, backing off all the way to a
smoothed unigram.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, FormatError
from .tokens import BOS, EOS, NUM_SPECIALS, TokenLayout

MAX_HISTORY_ITEMS = 20
CHECKPOINT_MAGIC = b"SPECREC1"


def build_token_sequence(
    history: list[int], catalog, max_items: int = MAX_HISTORY_ITEMS
) -> tuple[int, ...]:
    """Flatten a chronological item history into ``[bos, digits..., eos]``.

    Keeps only the most recent ``max_items`` items.
    """
    if not history:
        raise ValueError("history must contain at least one item")
    layout = catalog.layout
    tokens = [BOS]
    for item in history[-max_items:]:
        tokens.extend(layout.digits_to_tokens(catalog.semantic_id(item)))
    tokens.append(EOS)
    return tuple(tokens)


def decode_context(x_tokens: tuple[int, ...]) -> tuple[int, ...]:
    """Conditioning context for generation: the input sequence sans eos."""
    if x_tokens and x_tokens[-1] == EOS:
        return x_tokens[:-1]
    return tuple(x_tokens)


class Scorer:
    """Base scorer contract.

    ``score(context)`` returns a log-probability vector over the next token;
    ``encode(tokens)`` returns an L2-normalized representation when the
    ``can_encode`` capability is present.
    """

    can_score = True
    can_encode = False
    vocab_size: int

    def score(self, context: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError

    def token_logprob(self, context: tuple[int, ...], token: int) -> float:
        return float(self.score(context)[token])

    def encode(self, tokens: tuple[int, ...]) -> np.ndarray:
        raise CapabilityError("scorer has no encode capability")


@dataclass
class NGramScorer(Scorer):
    """Interpolated back-off n-gram over semantic-ID token streams.

    ``order`` is the classical n-gram order: contexts of up to ``order - 1``
    tokens are used. The encode capability comes from a PPMI-weighted token
    co-occurrence matrix factorized to ``dim`` dimensions; a sequence encoding
    is the L2-normalized mean of its non-special token vectors.
    """

    order: int
    smoothing: float
    vocab_size: int
    # counts[k] maps a length-k context tuple to {token: count}
    counts: list[dict] = field(default_factory=list)
    totals: list[dict] = field(default_factory=list)
    token_vectors: np.ndarray | None = None
    can_encode_flag: bool = True
    _dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def can_encode(self) -> bool:  # type: ignore[override]
        return self.can_encode_flag and self.token_vectors is not None

    def _base_dist(self) -> np.ndarray:
        uni = np.zeros(self.vocab_size)
        for t, c in self.counts[0].get((), {}).items():
            uni[t] = c
        total = self.totals[0].get((), 0)
        av = self.smoothing * self.vocab_size
        return (uni + self.smoothing) / (total + av)

    def score(self, context: tuple[int, ...]) -> np.ndarray:
        """Log-probability vector of the next token given ``context``."""
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        cached = self._dist_cache.get(ctx)
        if cached is not None:
            return cached
        av = self.smoothing * self.vocab_size
        dist = self._base_dist()
        for k in range(1, len(ctx) + 1):
            sub = ctx[-k:]
            table = self.counts[k].get(sub)
            if table is None:
                continue  # unseen context: stay at the lower-order estimate
            vec = np.zeros(self.vocab_size)
            for t, c in table.items():
                vec[t] = c
            total = self.totals[k][sub]
            dist = (vec + av * dist) / (total + av)
        logd = np.log(dist)
        if len(self._dist_cache) < 500_000:
            self._dist_cache[ctx] = logd
        return logd

    def token_logprob(self, context: tuple[int, ...], token: int) -> float:
        """Scalar fast path; same recursion as :meth:`score`."""
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        cached = self._dist_cache.get(ctx)
        if cached is not None:
            return float(cached[token])
        av = self.smoothing * self.vocab_size
        uni = self.counts[0].get((), {}).get(token, 0)
        p = (uni + self.smoothing) / (self.totals[0].get((), 0) + av)
        for k in range(1, len(ctx) + 1):
            sub = ctx[-k:]
            table = self.counts[k].get(sub)
            if table is None:
                continue
            p = (table.get(token, 0) + av * p) / (self.totals[k][sub] + av)
        return float(np.log(p))

    def encode(self, tokens: tuple[int, ...]) -> np.ndarray:
        if not self.can_encode:
            raise CapabilityError("scorer has no encode capability")
        interior = [t for t in tokens if t >= NUM_SPECIALS]
        if not interior:
            raise ValueError("nothing to encode: sequence has no digit tokens")
        vec = self.token_vectors[interior].mean(axis=0)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    # -- checkpoint ---------------------------------------------------------

    def save(self, path) -> None:
        """Self-describing binary checkpoint: JSON preamble + raw matrix."""
        counts_ser = [
            [[list(ctx), sorted(table.items())] for ctx, table in self.counts[k].items()]
            for k in range(self.order)
        ]
        header = {
            "order": self.order,
            "vocab_size": self.vocab_size,
            "smoothing": self.smoothing,
            "dim": 0 if self.token_vectors is None else self.token_vectors.shape[1],
            "counts": counts_ser,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            if self.token_vectors is not None:
                fh.write(np.ascontiguousarray(self.token_vectors, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "NGramScorer":
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise FormatError("not a scorer checkpoint (bad magic)")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen))
            rest = fh.read()
        order = header["order"]
        vocab = header["vocab_size"]
        counts: list[dict] = [dict() for _ in range(order)]
        totals: list[dict] = [dict() for _ in range(order)]
        for k, entries in enumerate(header["counts"]):
            for ctx_list, pairs in entries:
                ctx = tuple(ctx_list)
                table = {int(t): int(c) for t, c in pairs}
                counts[k][ctx] = table
                totals[k][ctx] = sum(table.values())
        dim = header["dim"]
        vectors = None
        if dim:
            vectors = np.frombuffer(rest, dtype="<f8").reshape(vocab, dim).copy()
        return cls(
            order=order,
            smoothing=header["smoothing"],
            vocab_size=vocab,
            counts=counts,
            totals=totals,
            token_vectors=vectors,
        )


def _ppmi_token_vectors(
    sequences: list[tuple[int, ...]],
    vocab_size: int,
    dim: int,
    window: int,
) -> np.ndarray:
    cooc = np.zeros((vocab_size, vocab_size))
    for seq in sequences:
        n = len(seq)
        for i, t in enumerate(seq):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    cooc[t, seq[j]] += 1.0
    total = cooc.sum()
    if total == 0:
        return np.zeros((vocab_size, dim))
    row = cooc.sum(axis=1, keepdims=True)
    col = cooc.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(cooc * total / (row @ col))
    ppmi = np.where(np.isfinite(pmi), np.maximum(pmi, 0.0), 0.0)
    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    k = min(dim, len(s))
    vecs = u[:, :k] * np.sqrt(s[:k])
    # fix SVD sign ambiguity for reproducibility
    for j in range(k):
        col_j = vecs[:, j]
        pivot = np.argmax(np.abs(col_j))
        if col_j[pivot] < 0:
            vecs[:, j] = -col_j
    if k < dim:
        vecs = np.hstack([vecs, np.zeros((vocab_size, dim - k))])
    return vecs


def fit_ngram(
    sequences: list[tuple[int, ...]],
    layout: TokenLayout,
    order: int,
    smoothing: float = 0.1,
    dim: int = 32,
    seed: int = 0,
    cooc_window: int | None = None,
) -> NGramScorer:
    """Count-based fit; deterministic for a fixed seed and input order."""
    if not sequences:
        raise ValueError("training corpus is empty")
    if order < 1:
        raise ValueError("order must be >= 1")
    del seed  # counting and SVD are deterministic; kept for interface parity
    vocab = layout.vocab_size
    counts: list[dict] = [dict() for _ in range(order)]
    totals: list[dict] = [dict() for _ in range(order)]
    for seq in sequences:
        for i in range(1, len(seq)):
            target = seq[i]
            for k in range(min(order, i + 1)):
                ctx = tuple(seq[i - k : i])
                table = counts[k].setdefault(ctx, {})
                table[target] = table.get(target, 0) + 1
                totals[k][ctx] = totals[k].get(ctx, 0) + 1
    window = cooc_window if cooc_window is not None else layout.num_levels
    vectors = _ppmi_token_vectors(sequences, vocab, dim, window)
    return NGramScorer(
        order=order,
        smoothing=smoothing,
        vocab_size=vocab,
        counts=counts,
        totals=totals,
        token_vectors=vectors,
    )


def chain_logprobs(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    candidate_tokens: tuple[int, ...],
) -> list[float]:
    """Per-digit conditional log-probabilities of a candidate's semantic ID."""
    if not scorer.can_score:
        raise CapabilityError("scorer has no score capability")
    ctx = list(decode_context(x_tokens))
    out = []
    for t in candidate_tokens:
        out.append(scorer.token_logprob(tuple(ctx), t))
        ctx.append(t)
    return out


def encode_sequence(scorer: Scorer, tokens: tuple[int, ...]) -> np.ndarray:
    if not getattr(scorer, "can_encode", False):
        raise CapabilityError("scorer has no encode capability")
    return scorer.encode(tokens)


@dataclass(frozen=True)
class Beam:
    """A decoded digit prefix with its summed log-probability."""

    tokens: tuple[int, ...]
    score: float

    def digits(self, layout: TokenLayout) -> tuple[int, ...]:
        return layout.tokens_to_digits(self.tokens)


def beam_search(
    scorer: Scorer,
    x_tokens: tuple[int, ...],
    layout: TokenLayout,
    beam_width: int,
    steps: int,
    trie: dict[tuple[int, ...], set[int]] | None = None,
    start_beams: list[Beam] | None = None,
) -> list[Beam]:
    """Level-masked beam search over semantic-ID digit paths.

    ``trie`` optionally maps a digit prefix to its allowed next codes; beams
    with no allowed continuation are dropped. Ties are broken toward the
    lexicographically smaller token sequence. Returns beams sorted by score
    descending.
    """
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if not 0 <= steps <= layout.num_levels:
        raise ValueError("steps must lie in 0..num_levels")
    base_ctx = decode_context(x_tokens)
    beams = start_beams if start_beams is not None else [Beam((), 0.0)]
    start_level = len(beams[0].tokens) if beams else 0
    for level in range(start_level, steps):
        allowed_range = layout.level_range(level)
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for beam in beams:
            logd = scorer.score(base_ctx + beam.tokens)
            if trie is not None:
                prefix = layout.tokens_to_digits(beam.tokens)
                codes = trie.get(prefix, set())
                tokens_here = [layout.token(level, c) for c in sorted(codes)]
            else:
                tokens_here = allowed_range
            for t in tokens_here:
                candidates.append((beam.score + float(logd[t]), beam.tokens + (t,)))
        candidates.sort(key=lambda pair: (-pair[0], pair[1]))
        beams = [Beam(tokens, score) for score, tokens in candidates[:beam_width]]
        if not beams:
            return []
    return beams


def build_prefix_trie(
    semantic_ids: list[tuple[int, ...]]
) -> dict[tuple[int, ...], set[int]]:
    """Prefix -> allowed-next-code map for constrained beam search."""
    trie: dict[tuple[int, ...], set[int]] = {}
    for sid in semantic_ids:
        for j in range(len(sid)):
            trie.setdefault(sid[:j], set()).add(sid[j])
    return trie
