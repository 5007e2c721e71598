"""Token namespace layout for semantic-ID sequences.

Every item is encoded as ``num_levels`` digits. The first ``num_levels - 1``
digits come from residual quantization codebooks; the last digit is a
collision counter. Each level occupies a disjoint integer token range so a
flat vocabulary can be shared by the sequence model, with special tokens in
a reserved low range.
"""

from __future__ import annotations

from dataclasses import dataclass

BOS = 0
EOS = 1
NUM_SPECIALS = 2


@dataclass(frozen=True)
class TokenLayout:
    """Maps (level, code) pairs to flat token ids and back."""

    num_levels: int
    codebook_size: int

    def __post_init__(self):
        if self.num_levels < 2:
            raise ValueError("need at least one semantic level plus the id digit")
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be positive")

    @property
    def vocab_size(self) -> int:
        return NUM_SPECIALS + self.num_levels * self.codebook_size

    def level_range(self, level: int) -> range:
        """Token ids allowed at digit position ``level`` (0-based)."""
        if not 0 <= level < self.num_levels:
            raise ValueError(f"level {level} out of range")
        start = NUM_SPECIALS + level * self.codebook_size
        return range(start, start + self.codebook_size)

    def token(self, level: int, code: int) -> int:
        if not 0 <= code < self.codebook_size:
            raise ValueError(f"code {code} outside level vocabulary")
        return NUM_SPECIALS + level * self.codebook_size + code

    def level_of(self, token: int) -> int:
        if token < NUM_SPECIALS:
            raise ValueError("special tokens carry no level")
        return (token - NUM_SPECIALS) // self.codebook_size

    def code_of(self, token: int) -> int:
        if token < NUM_SPECIALS:
            raise ValueError("special tokens carry no code")
        return (token - NUM_SPECIALS) % self.codebook_size

    def digits_to_tokens(self, digits: tuple[int, ...]) -> tuple[int, ...]:
        """Per-level codes -> flat token ids, one level per position."""
        return tuple(self.token(i, c) for i, c in enumerate(digits))

    def tokens_to_digits(self, tokens: tuple[int, ...]) -> tuple[int, ...]:
        digits = []
        for i, t in enumerate(tokens):
            if self.level_of(t) != i:
                raise ValueError("token stream violates level discipline")
            digits.append(self.code_of(t))
        return tuple(digits)
