"""
LSTM language model over word pieces (or words through `WordLevelLM`).

Utterance start: zero state, then </s> is fed; states are plain tuples of numpy arrays, so a
hypothesis can keep its own state and share it with its extensions.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.numerics.checkpoint import read_checkpoint, write_checkpoint
from core.numerics.graph import Graph, clip_grad_norm
from core.numerics.layers import log_softmax, lstm_init, lstm_sequence, lstm_step, uniform_init
from core.numerics.optim import Adam
from core.numerics.prng import make_prng
from core.numerics.tensor import Tensor, no_grad
from core.wordpiece import EOS_ID, WordVocab
from utils.errors import CheckpointFormatError, InvalidArgumentError, TrainingDivergedError
from utils.logger import logger

LMState = Tuple[Tuple[np.ndarray, np.ndarray], ...]


class NeuralLM:
    def __init__(self, graph: Graph):
        self.graph = graph
        self.num_layers = 0
        while f"lm.layer{self.num_layers}.Wh" in graph:
            self.num_layers += 1
        if self.num_layers == 0 or "lm.embed" not in graph:
            raise CheckpointFormatError("parameters do not describe an LSTM LM")
        self.vocab_size, self.embed_dim = graph["lm.embed"].shape
        self.hidden = graph["lm.layer0.Wh"].shape[1]
        self._layer_params = [graph.group(f"lm.layer{l}") for l in range(self.num_layers)]

    @classmethod
    def initialize(
        cls,
        vocab_size: int,
        hidden: int = 1024,
        num_layers: int = 2,
        embed_dim: int = 0,
        rng: Optional[np.random.Generator] = None,
        seed: int = 1,
    ) -> "NeuralLM":
        rng = rng if rng is not None else make_prng(seed)
        embed_dim = embed_dim or hidden
        graph = Graph()
        graph.add("lm.embed", rng.uniform(-0.1, 0.1, size=(vocab_size, embed_dim)))
        input_dim = embed_dim
        for layer in range(num_layers):
            graph.add_group(f"lm.layer{layer}", lstm_init(rng, input_dim, hidden))
            input_dim = hidden
        graph.add("lm.out.W", uniform_init(rng, (vocab_size, hidden), hidden))
        graph.add("lm.out.b", np.zeros(vocab_size))
        return cls(graph)

    @classmethod
    def load(cls, path: str) -> "NeuralLM":
        return cls(Graph.from_arrays(read_checkpoint(path)))

    def save(self, path: str, dtype: Optional[str] = None) -> None:
        write_checkpoint(path, self.graph.state_dict(), dtype=dtype)

    def init_state(self) -> LMState:
        zeros = np.zeros(self.hidden)
        return tuple((zeros, zeros) for _ in range(self.num_layers))

    # Fusion protocol
    def start(self) -> Tuple[np.ndarray, LMState]:
        return nnlm_step(self, self.init_state(), EOS_ID)

    def step(self, state: LMState, token: int) -> Tuple[np.ndarray, LMState]:
        return nnlm_step(self, state, token)

    def token_logprobs(self, tokens: Sequence[int]) -> List[float]:
        """Natural-log probability of each token and the closing </s>."""
        log_probs, state = self.start()
        values = []
        for token in list(tokens) + [EOS_ID]:
            self._check_token(token)
            values.append(float(log_probs[int(token)]))
            log_probs, state = nnlm_step(self, state, token)
        return values

    def sentence_logprob(self, tokens: Sequence[int]) -> float:
        return float(sum(self.token_logprobs(tokens)))

    def _check_token(self, token: int) -> None:
        if not 0 <= int(token) < self.vocab_size:
            raise InvalidArgumentError(f"token id {token} out of range for LM vocab of {self.vocab_size}")

    def sequence_loss(self, tokens: Sequence[int]) -> Tensor:
        """Mean next-token cross-entropy of </s> + tokens -> tokens + </s>."""
        inputs = np.array([EOS_ID] + list(tokens), dtype=np.int64)
        targets = np.array(list(tokens) + [EOS_ID], dtype=np.int64)
        h = self.graph["lm.embed"][inputs]
        for params in self._layer_params:
            h = lstm_sequence(h, params)
        logits = h @ self.graph["lm.out.W"].T + self.graph["lm.out.b"]
        picked = log_softmax(logits, axis=1)[np.arange(len(targets)), targets]
        return -picked.sum() * (1.0 / len(targets))


def nnlm_step(lm: NeuralLM, state: LMState, token: int) -> Tuple[np.ndarray, LMState]:
    """Feed one token; returns the next-token log-distribution and the new state."""
    lm._check_token(token)
    with no_grad():
        x = lm.graph["lm.embed"].data[int(token)]
        layers = []
        for (h, c), params in zip(state, lm._layer_params):
            h_next, c_next = lstm_step(x, h, c, params)
            layers.append((h_next.data, c_next.data))
            x = h_next.data
        logits = lm.graph["lm.out.W"].data @ x + lm.graph["lm.out.b"].data
    return log_softmax(logits), tuple(layers)


def train_nnlm(
    lm: NeuralLM,
    sentences: Sequence[Sequence[int]],
    epochs: int = 10,
    lr: float = 0.001,
    clip: float = 5.0,
    rng: Optional[np.random.Generator] = None,
) -> List[float]:
    """
    Fixed-rate Adam, one sentence per update, global-norm clipping.

    Returns:
        mean training loss per epoch
    """
    sentences = [list(s) for s in sentences if len(s) > 0]
    if not sentences:
        raise InvalidArgumentError("no sentences to train on")
    rng = rng if rng is not None else make_prng(1)
    optimizer = Adam(lm.graph)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for index in rng.permutation(len(sentences)):
            loss = lm.sequence_loss(sentences[index])
            if not np.isfinite(loss.item()):
                logger.error(f"LM training diverged in epoch {epoch + 1}")
                raise TrainingDivergedError(f"non-finite LM loss in epoch {epoch + 1}")
            grads, _ = clip_grad_norm(lm.graph.backward(loss), clip)
            optimizer.step(grads, lr)
            total += loss.item()
        history.append(total / len(sentences))
        logger.info(f"LM epoch {epoch + 1}/{epochs}: loss {history[-1]:.4f}")
    return history


class WordLevelLM:
    """The LSTM LM over a word vocabulary, queried with word strings."""

    def __init__(self, lm: NeuralLM, vocab: WordVocab):
        if lm.vocab_size != vocab.size:
            raise InvalidArgumentError(f"LM vocab {lm.vocab_size} does not match word vocab {vocab.size}")
        self.lm = lm
        self.vocab = vocab

    def token_logprobs(self, words: Sequence[str]) -> List[float]:
        return self.lm.token_logprobs(self.vocab.ids(words))

    def sentence_logprob(self, words: Sequence[str]) -> float:
        return self.lm.sentence_logprob(self.vocab.ids(words))

