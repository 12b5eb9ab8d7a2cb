"""Shared fixtures: tiny model shapes, table-driven scorers and the synthetic toy corpus."""
import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pytest
from hypothesis import settings

from core.model.las import LASModel, ModelDims
from core.numerics.layers import log_softmax
from core.numerics.prng import make_prng
from core.numerics.tensor import set_default_dtype
from core.training.trainer import prepare_utterances
from core.wordpiece import EOS_ID, encode, learn_bpe
from utils.config import LASConfig

settings.register_profile("las", deadline=None, max_examples=50)
settings.load_profile("las")

TOY_WORDS = ["cab", "bad", "dab", "abc", "cad", "bead", "face", "deaf"]


@pytest.fixture(autouse=True)
def float64_computation():
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def tiny_dims() -> ModelDims:
    return ModelDims(
        vocab_size=6,
        feat_dim=3,
        listener_layers=1,
        listener_hidden=2,
        speller_layers=1,
        speller_hidden=3,
        embed_dim=3,
        attention_dim=3,
        conv_filters=2,
        conv_width=3,
    )


@pytest.fixture
def tiny_model(tiny_dims) -> LASModel:
    return LASModel.initialize(tiny_dims, seed=7)


class TableScorer:
    """Step scorer whose distribution is a fixed function of the emitted prefix."""

    def __init__(self, vocab_size: int, table: Callable[[Tuple[int, ...]], np.ndarray]):
        self.vocab_size = vocab_size
        self.table = table

    def default_max_steps(self, factor: float, offset: int) -> int:
        return offset

    def start(self) -> Tuple[int, ...]:
        return ()

    def step(self, state):
        return self.table(state), state

    def feed(self, state, token):
        return state + (int(token),)


class TableLM:
    """Fusion LM over the same prefix function protocol."""

    def __init__(self, table: Callable[[Tuple[int, ...]], np.ndarray]):
        self.table = table

    def start(self):
        return self.table(()), ()

    def step(self, state, token):
        state = state + (int(token),)
        return self.table(state), state


def random_table(seed: int, vocab_size: int) -> Callable[[Tuple[int, ...]], np.ndarray]:
    """Reproducible log-distributions keyed by prefix."""
    cache: Dict[Tuple[int, ...], np.ndarray] = {}

    def table(prefix: Tuple[int, ...]) -> np.ndarray:
        if prefix not in cache:
            key = seed
            for token in prefix:
                key = key * (vocab_size + 1) + token + 1
            cache[prefix] = log_softmax(make_prng(key).normal(size=vocab_size) * 2.0)
        return cache[prefix]

    return table


@pytest.fixture
def table_scorer():
    return TableScorer


@pytest.fixture
def table_lm():
    return TableLM


@pytest.fixture
def make_table():
    return random_table


def render_tokens(tokens: Sequence[int], patterns: np.ndarray, rng: np.random.Generator, frames_per_token: int = 8) -> np.ndarray:
    """Each token becomes a fixed pattern repeated over `frames_per_token` frames, plus noise."""
    blocks = [np.tile(patterns[t], (frames_per_token, 1)) for t in tokens]
    frames = np.concatenate(blocks, axis=0)
    return frames + 0.05 * rng.normal(size=frames.shape)


def build_toy_corpus(seed: int = 3, num_utterances: int = 10, feat_dim: int = 8):
    """
    Ten short sentences over a handful of words; acoustic frames are a deterministic rendering
    of each sentence's word pieces.

    Returns:
        (vocab, utterances)
    """
    rng = make_prng(seed)
    sentences = []
    for _ in range(num_utterances):
        count = int(rng.integers(1, 4))
        sentences.append(" ".join(TOY_WORDS[int(i)] for i in rng.integers(0, len(TOY_WORDS), size=count)))
    vocab = learn_bpe(sentences * 2, target_size=20)
    patterns = rng.normal(size=(vocab.size, feat_dim))
    corpus = []
    for index, text in enumerate(sentences):
        frames = render_tokens(encode(text, vocab), patterns, rng)
        corpus.append((f"utt{index}", frames, text))
    return vocab, prepare_utterances(corpus, vocab)


@pytest.fixture
def toy_corpus():
    return build_toy_corpus()


@pytest.fixture
def toy_config() -> LASConfig:
    """Default SGD pipeline (warmup, new-bob, plateau-step sampling) with rates sized for the toy model."""
    return LASConfig(
        feat_dim=8,
        listener_layers=2,
        listener_hidden=32,
        speller_layers=1,
        speller_hidden=32,
        attention_dim=16,
        conv_filters=4,
        conv_width=5,
        lr_start=0.05,
        lr_end=1.0,
        warmup_steps=50,
        batch_size=2,
        max_epochs=400,
        checkpoint_dtype="float64",
        mwer_epochs=0,
        beam=4,
        nbest=4,
        seed=11,
    )


def exhaustive_best(
    scorer_table: Callable,
    vocab_size: int,
    max_len: int,
    alpha: float,
    lm_table: Callable = None,
    lm_weight: float = 0.0,
) -> Tuple[List[int], float]:
    """Brute-force the top-1 sequence under the beam-search scoring, ending in </s>."""
    emittable = [t for t in range(vocab_size) if t not in (0, 1)]
    use_lm = lm_table is not None and lm_weight > 0.0
    best: Tuple[float, Tuple[int, ...]] = (-math.inf, ())

    def expand(prefix: Tuple[int, ...], las: float, lm: float):
        nonlocal best
        las_row = scorer_table(prefix)
        lm_row = lm_table(prefix) if use_lm else None
        length = len(prefix) + 1
        penalty = ((5.0 + length) / 6.0) ** alpha
        for token in emittable:
            las_next = las + float(las_row[token])
            lm_next = lm + float(lm_row[token]) if use_lm else 0.0
            raw = las_next + lm_weight * lm_next if use_lm else las_next
            tokens = prefix + (token,)
            if token == EOS_ID:
                score = raw / penalty
                if score > best[0] or (score == best[0] and tokens < best[1]):
                    best = (score, tokens)
            elif length < max_len:
                expand(tokens, las_next, lm_next)

    expand((), 0.0, 0.0)
    return list(best[1]), best[0]


@pytest.fixture
def brute_force():
    return exhaustive_best
