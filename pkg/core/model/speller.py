"""Attention-conditioned LSTM speller and label smoothing."""
from typing import Mapping, NamedTuple, Tuple

import numpy as np

from core.model.attention import AttentionState
from core.numerics.graph import Graph
from core.numerics.layers import log_softmax, lstm_init, lstm_step, uniform_init
from core.numerics.tensor import Tensor, concat
from utils.errors import InvalidArgumentError

LayerState = Tuple[Tensor, Tensor]


class SpellerState(NamedTuple):
    layers: Tuple[LayerState, ...]     # (h, c) per LSTM layer, bottom first
    prev_token: int
    attention: AttentionState

    @property
    def query(self) -> Tensor:
        """s_{i-1}: top-layer hidden state, the attention query."""
        return self.layers[-1][0]


def initial_layers(num_layers: int, hidden: int) -> Tuple[LayerState, ...]:
    return tuple((Tensor(np.zeros(hidden)), Tensor(np.zeros(hidden))) for _ in range(num_layers))


def init_speller(
    graph: Graph,
    rng: np.random.Generator,
    vocab_size: int,
    embed_dim: int,
    context_dim: int,
    hidden: int,
    num_layers: int,
) -> None:
    graph.add("speller.embed", rng.uniform(-0.1, 0.1, size=(vocab_size, embed_dim)))
    input_dim = embed_dim + context_dim
    for layer in range(num_layers):
        graph.add_group(f"speller.layer{layer}", lstm_init(rng, input_dim, hidden))
        input_dim = hidden
    graph.add("speller.out.W", uniform_init(rng, (vocab_size, hidden + context_dim), hidden + context_dim))
    graph.add("speller.out.b", np.zeros(vocab_size))


def spell_step(
    state: SpellerState,
    context: Tensor,
    graph: Graph,
) -> Tuple[Tensor, Tuple[LayerState, ...]]:
    """
    Embed the previous token, concatenate the context, run the LSTM stack and project.

    Returns:
        (log-distribution over the vocabulary, new per-layer states)
    """
    embed = graph["speller.embed"]
    vocab_size = embed.shape[0]
    if not 0 <= state.prev_token < vocab_size:
        raise InvalidArgumentError(f"token id {state.prev_token} out of range for vocab of {vocab_size}")
    inp = concat([embed[int(state.prev_token)], context])
    layers = []
    for layer, (h, c) in enumerate(state.layers):
        h, c = lstm_step(inp, h, c, graph.group(f"speller.layer{layer}"))
        layers.append((h, c))
        inp = h
    logits = graph["speller.out.W"] @ concat([inp, context]) + graph["speller.out.b"]
    return log_softmax(logits), tuple(layers)


def smooth_labels(truth: int, vocab_size: int, epsilon: float) -> np.ndarray:
    """Truth gets 1 - epsilon, every other token epsilon / (K - 1)."""
    if not 0.0 <= epsilon < 1.0:
        raise InvalidArgumentError(f"smoothing factor must be in [0, 1), got {epsilon}")
    if vocab_size < 2:
        raise InvalidArgumentError(f"vocab size must be >= 2, got {vocab_size}")
    if not 0 <= truth < vocab_size:
        raise InvalidArgumentError(f"token id {truth} out of range for vocab of {vocab_size}")
    q = np.full(vocab_size, epsilon / (vocab_size - 1))
    q[truth] = 1.0 - epsilon
    return q


def smoothed_targets(tokens, vocab_size: int, epsilon: float) -> np.ndarray:
    return np.stack([smooth_labels(t, vocab_size, epsilon) for t in tokens])


def layer_sizes(params: Mapping[str, np.ndarray]) -> Tuple[int, int]:
    """(number of speller layers, hidden width) read off a parameter map."""
    count = 0
    while f"speller.layer{count}.Wh" in params:
        count += 1
    if count == 0:
        raise InvalidArgumentError("no speller layers in parameter map")
    return count, int(np.shape(params["speller.layer0.Wh"])[1])
