import numpy as np
import pytest

from specrec import (
    SpecConfig,
    generate_synthetic,
    temporal_split,
)
from specrec.runtime import Bundle, fit_bundle
from specrec.seqmodel import Scorer
from specrec.tokens import TokenLayout


class ForcedScorer(Scorer):
    """One-hot scorer: probability 1 on a forced token per context length.

    ``path`` gives the forced continuation tokens, consumed by position
    relative to ``base_len`` (the conditioning context length).
    """

    can_encode = False

    def __init__(self, vocab_size: int, path: tuple[int, ...], base_len: int):
        self.vocab_size = vocab_size
        self.path = path
        self.base_len = base_len

    def score(self, context):
        step = len(context) - self.base_len
        forced = self.path[step] if 0 <= step < len(self.path) else 0
        out = np.full(self.vocab_size, -np.inf)
        out[forced] = 0.0
        return out


class UniformScorer(Scorer):
    can_encode = False

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def score(self, context):
        return np.full(self.vocab_size, -np.log(self.vocab_size))


class FixedLogpScorer(Scorer):
    """Assigns a scripted log-probability to each continuation step.

    Used for hand fixtures of the verification-score arithmetic. The vector
    ``step_logps`` gives log P at step i for whatever token is queried; the
    rest of the distribution mass is irrelevant to those fixtures.
    """

    can_encode = False

    def __init__(self, vocab_size: int, step_logps: list[float], base_len: int):
        self.vocab_size = vocab_size
        self.step_logps = step_logps
        self.base_len = base_len

    def score(self, context):
        step = len(context) - self.base_len
        val = self.step_logps[step] if 0 <= step < len(self.step_logps) else -1.0
        return np.full(self.vocab_size, val)


@pytest.fixture(scope="session")
def dataset():
    return generate_synthetic(seed=3)


@pytest.fixture(scope="session")
def split(dataset):
    return temporal_split(dataset.log, dataset.t_valid, dataset.t_test)


@pytest.fixture(scope="session")
def bundle(dataset) -> Bundle:
    return fit_bundle(
        dataset.item_ids, dataset.embeddings, dataset.log, dataset.t_valid, seed=3
    )


@pytest.fixture(scope="session")
def self_bundle(dataset) -> Bundle:
    return fit_bundle(
        dataset.item_ids, dataset.embeddings, dataset.log, dataset.t_valid,
        seed=3, mode="self",
    )


@pytest.fixture(scope="session")
def valid_histories(bundle, split):
    """Internal-index histories (plus targets) for the validation cases."""
    _, valid, _ = split
    out = []
    for case in valid:
        hist = [bundle.catalog.index_of(e) for e in case.history]
        out.append((hist, bundle.catalog.index_of(case.target), case.target_unseen))
    return out


@pytest.fixture
def small_layout():
    return TokenLayout(num_levels=3, codebook_size=8)


def default_config(**kw) -> SpecConfig:
    base = dict(k=10, draft_size=50, threshold=-1.6, beam_width=50)
    base.update(kw)
    return SpecConfig(**base)
